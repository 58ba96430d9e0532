"""Underactuated Euler-Lagrange systems ``D q'' + C q' + grad P = B tau``.

The configuration space is a generalized cylinder: every coordinate is
either a displacement in R or an angle taken modulo its own period.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ConditioningError, EvaluationError

FD_REL_STEP = 1e-6
COND_LIMIT = 1e12


@dataclass(frozen=True)
class ConfigSpace:
    """Dimension plus optional per-coordinate periods (``None`` = linear)."""

    n: int
    periods: tuple = ()

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2 degrees of freedom, got %d" % self.n)
        periods = tuple(self.periods) or (None,) * self.n
        if len(periods) != self.n:
            raise ValueError("periods must have one entry per coordinate")
        for p in periods:
            if p is not None and not p > 0:
                raise ValueError("coordinate periods must be positive")
        object.__setattr__(self, "periods", periods)

    def wrap(self, q):
        """Map periodic coordinates into ``[-T_i/2, T_i/2)``."""
        q = np.array(q, dtype=float)
        for i, p in enumerate(self.periods):
            if p is not None:
                q[..., i] = (q[..., i] + 0.5 * p) % p - 0.5 * p
        return q

    def difference(self, a, b):
        """``a - b`` with periodic components taken as the shortest arc."""
        return self.wrap(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class MechanicalSystem:
    """Evaluable model data for an n-DOF system with n-1 inputs.

    ``coriolis(q, qdot)`` returns the matrix C, assumed linear in ``qdot``
    so that ``C(q, w) w`` is a quadratic form in ``w``.
    ``inertia_partials(q)``, when given, returns the n matrices dD/dq_i.
    """

    space: ConfigSpace
    inertia: Callable
    coriolis: Callable
    potential_gradient: Callable
    input_matrix: Callable
    annihilator: Callable
    inertia_partials: Optional[Callable] = None
    name: str = "system"

    @property
    def n(self):
        return self.space.n

    def velocity_quadratic(self, q, w):
        """The vector ``C(q, w) w``."""
        return self.coriolis(q, w) @ w

    def check_positive_definite(self, q):
        """Cholesky test of D(q); returns True or False."""
        try:
            np.linalg.cholesky(self.inertia(q))
        except np.linalg.LinAlgError:
            return False
        return True

    def annihilator_residual(self, q):
        """max |B_perp(q) B(q)| scaled by ``1 + |B_perp| |B|``."""
        bp = np.atleast_2d(self.annihilator(q))
        b = self.input_matrix(q)
        scale = 1.0 + np.linalg.norm(bp) * np.linalg.norm(b)
        return float(np.max(np.abs(bp @ b)) / scale)

    def validate(self, configurations: Sequence, tol=1e-9):
        """Check the structural invariants at each configuration.

        Raises ValueError naming the first violated property.
        """
        for q in configurations:
            d = self.inertia(q)
            if not np.allclose(d, d.T, atol=1e-12 * (1 + np.abs(d).max())):
                raise ValueError("inertia matrix not symmetric at q=%s" % (q,))
            if not self.check_positive_definite(q):
                raise ValueError("inertia matrix not positive definite at q=%s" % (q,))
            b = self.input_matrix(q)
            if np.linalg.matrix_rank(b) != self.n - 1:
                raise ValueError("input matrix rank deficient at q=%s" % (q,))
            if self.annihilator_residual(q) > tol:
                raise ValueError("annihilator does not cancel B at q=%s" % (q,))
            if not np.any(self.annihilator(q)):
                raise ValueError("annihilator vanishes at q=%s" % (q,))


def inertia_partials(mech, q):
    """The n matrices ``dD/dq_i``, analytic if available, else central FD."""
    q = np.asarray(q, dtype=float)
    if mech.inertia_partials is not None:
        parts = [np.asarray(p, dtype=float) for p in mech.inertia_partials(q)]
    else:
        parts = []
        for i in range(mech.n):
            h = FD_REL_STEP * (1.0 + abs(q[i]))
            dq = np.zeros_like(q)
            dq[i] = h
            parts.append((mech.inertia(q + dq) - mech.inertia(q - dq)) / (2.0 * h))
    for i, p in enumerate(parts):
        if not np.all(np.isfinite(p)):
            raise EvaluationError(
                "non-finite inertia derivative along q_%d" % (i + 1), coordinate=i)
    return parts


def christoffel_q(mech, q):
    """Matrices Q_1..Q_n with ``(Q_i)_jk = (d_k D_ij + d_j D_ik - d_i D_kj) / 2``.

    Returns an array of shape ``(n, n, n)`` indexed ``[i, j, k]``.
    """
    dd = np.array(inertia_partials(mech, q))  # dd[k] = dD/dq_k
    # dd[k, i, j] -> term1[i, j, k]
    term1 = np.transpose(dd, (1, 2, 0))
    term2 = np.transpose(dd, (1, 0, 2))
    term3 = dd  # dd[i, k, j] with D symmetric
    return 0.5 * (term1 + term2 - term3)


def christoffel_quadratic(mech, q, a, b=None):
    """``sum_i e_i a^T Q_i b``: the Christoffel form of the velocity terms."""
    q_mats = christoffel_q(mech, q)
    b = a if b is None else b
    return np.einsum("ijk,j,k->i", q_mats, a, b)


def forward_dynamics(mech, q, qdot, tau, check=True):
    """Accelerations ``D^{-1} (B tau - C qdot - grad P)``.

    With ``check`` the condition number of D(q) is tested first; the
    simulation loop turns this off for speed.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    d = mech.inertia(q)
    if check:
        check_conditioning(mech, q)
    rhs = mech.input_matrix(q) @ np.atleast_1d(tau) - mech.coriolis(q, qdot) @ qdot \
        - mech.potential_gradient(q)
    try:
        qdd = np.linalg.solve(d, rhs)
    except np.linalg.LinAlgError:
        raise ConditioningError("singular inertia matrix at q=%s" % (q,),
                                condition=np.inf) from None
    if not np.all(np.isfinite(qdd)):
        raise ConditioningError("inertia solve produced non-finite accelerations")
    return qdd


def check_conditioning(mech, q, limit=COND_LIMIT):
    """Raise ConditioningError if cond(D(q)) exceeds ``limit``."""
    cond = np.linalg.cond(mech.inertia(q))
    if not cond < limit:
        raise ConditioningError("inertia condition number %.3g" % cond, condition=cond)
    return cond
