"""Periodic Riccati equation by the one-shot generator method.

The stabilizing T-periodic solution of

    -Pi' = A^T Pi + Pi A - Pi B R^{-1} B^T Pi + Q

is ``Pi = Y X^{-1}`` where ``(X, Y)`` spans the stable invariant subspace of
the monodromy of the Hamiltonian flow ``[[A, -B R^{-1} B^T], [-Q, -A^T]]``.
The subspace is attracting in backward time, so it is propagated from
``t = T`` to ``t = 0`` with periodic QR re-orthonormalization.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur

from ._interp import UniformCubic
from .exceptions import ConjugatePointError, StabilizabilityError
from .integrate import rk4_tabulated
from .transverse import monodromy

RICCATI_STEPS = 4096
REORTHO_EVERY = 32
UNIT_CIRCLE_GAP = 1e-9


def _as_function(x):
    if callable(x):
        return x
    m = np.atleast_2d(np.asarray(x, dtype=float))
    return lambda t: m


@dataclass(frozen=True)
class PeriodicWeights:
    """State and input weights; constants or T-periodic callables."""

    Q: object
    R: object

    def q(self, t):
        return np.atleast_2d(_as_function(self.Q)(t))

    def r(self, t):
        return np.atleast_2d(_as_function(self.R)(t))

    def validate(self, period, grid=64):
        for t in np.linspace(0.0, period, grid, endpoint=False):
            for name, m in (("Q", self.q(t)), ("R", self.r(t))):
                if not np.allclose(m, m.T, atol=1e-12 * (1.0 + np.abs(m).max())):
                    raise ValueError("%s(t) not symmetric at t=%.6g" % (name, t))
                if np.linalg.eigvalsh(m).min() <= 0:
                    raise ValueError("%s(t) not positive definite at t=%.6g" % (name, t))


@dataclass(frozen=True)
class PeriodicGain:
    """Sampled Riccati solution and gain on a uniform grid of one period."""

    period: float
    k_grid: np.ndarray = field(repr=False)
    pi_grid: np.ndarray = field(repr=False)
    closed_loop_multipliers: np.ndarray
    periodicity_residual: float = 0.0
    symplectic_residual: float = 0.0
    metadata: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        k = np.asarray(self.k_grid, dtype=float)
        p = np.asarray(self.pi_grid, dtype=float)
        object.__setattr__(self, "k_grid", k)
        object.__setattr__(self, "pi_grid", p)
        object.__setattr__(self, "closed_loop_multipliers",
                           np.asarray(self.closed_loop_multipliers, dtype=complex))
        object.__setattr__(self, "_k", UniformCubic.periodic_from_samples(k, self.period))
        object.__setattr__(self, "_p", UniformCubic.periodic_from_samples(p, self.period))

    @property
    def t_grid(self):
        return np.linspace(0.0, self.period, self.k_grid.shape[0], endpoint=False)

    def K(self, t):
        return self._k(t)

    def Pi(self, t):
        return self._p(t)

    @property
    def stable(self):
        return bool(np.all(np.abs(self.closed_loop_multipliers) < 1.0))

    def to_dict(self):
        mult = self.closed_loop_multipliers
        return {
            "period": self.period,
            "K": self.k_grid.tolist(),
            "Pi": self.pi_grid.tolist(),
            "multipliers": [[float(z.real), float(z.imag)] for z in mult],
            "periodicity_residual": self.periodicity_residual,
            "symplectic_residual": self.symplectic_residual,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["period"]), np.array(d["K"]), np.array(d["Pi"]),
                   [complex(a, b) for a, b in d["multipliers"]],
                   float(d.get("periodicity_residual", 0.0)),
                   float(d.get("symplectic_residual", 0.0)), dict(d.get("metadata", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path):
        m, k = self.k_grid.shape[1:]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + ["K%d%d" % (i + 1, j + 1) for i in range(m) for j in range(k)])
            for t, row in zip(self.t_grid, self.k_grid):
                w.writerow(["%.12g" % t] + ["%.12g" % x for x in row.ravel()])


def _hamiltonian_samples(ltv, weights, ts):
    a = ltv.A(ts)
    b = ltv.B(ts)
    const = not (callable(weights.Q) or callable(weights.R))
    if const:
        q = np.broadcast_to(weights.q(0.0), a.shape)
        rinv = np.broadcast_to(np.linalg.inv(weights.r(0.0)), (ts.size,) + weights.r(0.0).shape)
    else:
        q = np.array([weights.q(t) for t in ts])
        rinv = np.array([np.linalg.inv(weights.r(t)) for t in ts])
    bt = np.transpose(b, (0, 2, 1))
    s = b @ rinv @ bt
    at = np.transpose(a, (0, 2, 1))
    return np.concatenate([np.concatenate([a, -s], axis=2),
                           np.concatenate([-q, -at], axis=2)], axis=1)


def symplectic_residual(m):
    """``|M^T J M - J| / max(1, |M|^2)`` in the max norm."""
    k = m.shape[0] // 2
    j = np.block([[np.zeros((k, k)), np.eye(k)], [-np.eye(k), np.zeros((k, k))]])
    return float(np.max(np.abs(m.T @ j @ m - j)) / max(1.0, np.max(np.abs(m)) ** 2))


def _graph(u, k, t):
    x, y = u[:k], u[k:]
    cond = np.linalg.cond(x)
    if not cond < 1e12:
        raise ConjugatePointError("stable subspace lost graph form at t=%.6g (cond %.3g)"
                                  % (t, cond), t=t)
    pi = np.linalg.solve(x.T, y.T)  # (Y X^{-1})^T
    pi = pi.T
    return 0.5 * (pi + pi.T)


def solve_periodic_riccati(ltv, weights, steps=RICCATI_STEPS, reortho=REORTHO_EVERY):
    """Stabilizing periodic Riccati solution and gain ``K = -R^{-1} B^T Pi``.

    Raises
    ------
    StabilizabilityError
        If the Hamiltonian monodromy has no stable subspace of full
        dimension, or the resulting Pi is not positive semidefinite.
    ConjugatePointError
        If the propagated subspace cannot be written as a graph ``Y X^{-1}``.
    """
    k = ltv.dim
    T = ltv.period
    ts = np.linspace(0.0, T, 2 * steps + 1)
    ham = _hamiltonian_samples(ltv, weights, ts)
    h = T / steps

    big = rk4_tabulated(ham, np.eye(2 * k), h)
    sym_res = symplectic_residual(big)
    _, z, sdim = schur(big, output="real", sort="iuc")
    lam = np.linalg.eigvals(big)
    if sdim != k or np.any(np.abs(np.abs(lam) - 1.0) < UNIT_CIRCLE_GAP):
        raise StabilizabilityError(
            "Hamiltonian monodromy has %d stable multipliers, need %d (|lambda| = %s)"
            % (sdim, k, np.sort(np.abs(lam))))
    u = z[:, :k]
    try:
        pi0 = _graph(u, k, T)
    except ConjugatePointError:
        # A stable subspace with no graph form means an unstable mode that
        # neither the input nor the cost can reach.
        raise StabilizabilityError("stable Hamiltonian subspace has no graph form; "
                                   "(A, B) not stabilizable")

    def orthonormalize(x):
        return np.linalg.qr(x)[0]

    us = rk4_tabulated(ham, u, h, backward=True, keep=True, every=reortho, fix=orthonormalize)
    pis = np.array([_graph(us[j], k, j * h) for j in range(steps)])
    if not np.all(np.isfinite(pis)):
        raise StabilizabilityError("non-finite Riccati solution")
    per_res = float(np.max(np.abs(pis[0] - pi0)))
    scale = float(np.max(np.abs(pis)))
    for j in range(steps):
        if np.linalg.eigvalsh(pis[j]).min() < -1e-9 * (1.0 + scale):
            raise StabilizabilityError("Pi not positive semidefinite at t=%.6g" % (j * h))
    ts = np.arange(steps) * h
    bt = np.transpose(ltv.B(ts), (0, 2, 1))
    ks = np.array([-np.linalg.solve(weights.r(t), b @ p) for t, b, p in zip(ts, bt, pis)])
    gain = PeriodicGain(T, ks, pis, [], per_res, sym_res)
    mult = closed_loop_multipliers(ltv, gain, steps)
    return PeriodicGain(T, ks, pis, mult, per_res, sym_res)


def closed_loop_multipliers(ltv, gain, steps=None):
    """Characteristic multipliers of ``z' = (A + B K) z``."""
    if abs(gain.period - ltv.period) > 1e-9 * (1.0 + ltv.period):
        raise ValueError("gain period %.9g differs from LTV period %.9g"
                         % (gain.period, ltv.period))
    return monodromy(ltv, steps, gain.K)[1]


def riccati_residual(ltv, weights, gain, refine=2):
    """Max-norm residual of the Riccati equation at interpolated points.

    Evaluated off-grid, between the stored samples, and scaled by
    ``1 + max |Pi|``.
    """
    n = gain.pi_grid.shape[0] * refine
    worst = 0.0
    for t in (np.arange(n) + 0.5) * gain.period / n:
        p = gain.Pi(t)
        dp = gain._p(t, 1)
        a = ltv.A(t)
        b = ltv.B(t)
        s = b @ np.linalg.solve(weights.r(t), b.T)
        res = dp + a.T @ p + p @ a - p @ s @ p + weights.q(t)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst / (1.0 + float(np.max(np.abs(gain.pi_grid))))
