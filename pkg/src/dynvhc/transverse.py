"""Transverse linearization of closed orbits of control-affine systems.

For ``x' = f(x) + g(x) u`` with a closed orbit given both by a regular
parameterization ``phi`` and an implicit description ``H(x) = 0``, the
deviation ``z = H(x)`` obeys, to first order and in the orbit parameter,

    z' = rho (dL_f H) dH^+ z + rho (L_g H) u,   rho = |phi'|^2 / <f, phi'>.

This module evaluates that pair, specializes it to the extended reduced
dynamics of a dynamic VHC, and provides Floquet and Gramian tools.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._interp import UniformCubic
from .exceptions import ImplicitizationError, IntegrationError, NonTransversalityError
from .integrate import rk4_tabulated

LTV_GRID = 2048
FD_STEP = 1e-6
PSI_S_STEP = 1e-6
PERIODICITY_TOL = 1e-8


@dataclass(frozen=True)
class ControlAffine:
    """``x' = drift(x) + input(x) u`` on R^dim."""

    dim: int
    drift: Callable
    input: Callable


@dataclass(frozen=True)
class OrbitImplicitization:
    """A closed orbit as ``phi(s)``, s in [0, period), and as ``H(x) = 0``.

    ``dlfh``, if given, returns the Jacobian of ``x -> dH(x) f(x)``;
    otherwise it is approximated by central differences.
    """

    param: Callable
    dparam: Callable
    period: float
    implicit: Callable
    implicit_jacobian: Callable
    dlfh: Optional[Callable] = None


@dataclass(frozen=True)
class TransverseLTV:
    """A periodic pair ``(A(t), B(t))`` cached on a uniform grid.

    ``a_grid`` and ``b_grid`` hold the samples at ``t_k = k * period / N``;
    ``A`` and ``B`` interpolate them with periodic cubic splines.
    """

    period: float
    a_grid: np.ndarray = field(repr=False)
    b_grid: np.ndarray = field(repr=False)
    periodicity_residual: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a_grid, dtype=float)
        b = np.asarray(self.b_grid, dtype=float)
        if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1]:
            raise ValueError("a_grid must be (N, k, k) and b_grid (N, k, m)")
        object.__setattr__(self, "a_grid", a)
        object.__setattr__(self, "b_grid", b)
        object.__setattr__(self, "_a", UniformCubic.periodic_from_samples(a, self.period))
        object.__setattr__(self, "_b", UniformCubic.periodic_from_samples(b, self.period))

    @classmethod
    def from_functions(cls, a, b, period, grid=LTV_GRID):
        """Sample callables ``a(t)``, ``b(t)`` on the uniform grid."""
        t = np.linspace(0.0, period, grid, endpoint=False)
        ag = np.array([np.atleast_2d(a(ti)) for ti in t])
        bg = np.array([np.atleast_2d(b(ti)) for ti in t])
        if bg.shape[1] != ag.shape[1]:
            bg = np.transpose(bg, (0, 2, 1))
        res = max(float(np.max(np.abs(np.atleast_2d(a(period)) - ag[0]))),
                  float(np.max(np.abs(np.reshape(b(period), bg[0].shape) - bg[0]))))
        return cls(float(period), ag, bg, res)

    @property
    def t_grid(self):
        return np.linspace(0.0, self.period, self.a_grid.shape[0], endpoint=False)

    @property
    def dim(self):
        return self.a_grid.shape[1]

    @property
    def inputs(self):
        return self.b_grid.shape[2]

    def A(self, t):
        return self._a(t)

    def B(self, t):
        return self._b(t)

    def to_csv(self, path):
        """One row per grid time: t, then A row-major, then B row-major."""
        k, m = self.dim, self.inputs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + ["A%d%d" % (i + 1, j + 1) for i in range(k) for j in range(k)]
                       + ["B%d%d" % (i + 1, j + 1) for i in range(k) for j in range(m)])
            for t, a, b in zip(self.t_grid, self.a_grid, self.b_grid):
                w.writerow(["%.12g" % t] + ["%.12g" % x for x in a.ravel()]
                           + ["%.12g" % x for x in b.ravel()])


def _right_pinv(dh):
    """``dH^T (dH dH^T)^{-1}`` through a QR factorization of ``dH^T``."""
    q, r = np.linalg.qr(dh.T)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise ImplicitizationError("implicit Jacobian dH is rank deficient on the orbit")
    return q @ np.linalg.inv(r).T


def _lfh_jacobian(sys, orb, x):
    if orb.dlfh is not None:
        return np.atleast_2d(orb.dlfh(x))
    h = FD_STEP * (1.0 + np.linalg.norm(x))
    cols = []
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        lp = np.atleast_2d(orb.implicit_jacobian(x + dx)) @ sys.drift(x + dx)
        lm = np.atleast_2d(orb.implicit_jacobian(x - dx)) @ sys.drift(x - dx)
        cols.append((lp - lm) / (2.0 * h))
    return np.column_stack(cols)


def transverse_linearize_general(sys, orb, grid=LTV_GRID, tol=1e-9):
    """Transverse linearization of ``orb`` for ``sys`` on a uniform grid.

    Raises
    ------
    NonTransversalityError
        If ``<f(phi), phi'>`` is negligible relative to ``|f| |phi'|``.
    ImplicitizationError
        If ``dH`` loses rank on the orbit.
    """

    def pair(t):
        x = np.asarray(orb.param(t), dtype=float)
        dphi = np.asarray(orb.dparam(t), dtype=float)
        fx = sys.drift(x)
        inner = float(fx @ dphi)
        if not abs(inner) > tol * (np.linalg.norm(fx) * np.linalg.norm(dphi) + 1e-300):
            raise NonTransversalityError("<f, phi'> vanishes at t=%.6g" % t)
        rho = float(dphi @ dphi) / inner
        dh = np.atleast_2d(orb.implicit_jacobian(x))
        a = rho * _lfh_jacobian(sys, orb, x) @ _right_pinv(dh)
        b = rho * dh @ np.atleast_2d(sys.input(x)).reshape(x.size, -1)
        return a, b

    t = np.linspace(0.0, orb.period, grid, endpoint=False)
    pairs = [pair(ti) for ti in t]
    ag = np.array([p[0] for p in pairs])
    bg = np.array([p[1] for p in pairs])
    a_end, b_end = pair(orb.period)
    res = max(float(np.max(np.abs(a_end - ag[0]))), float(np.max(np.abs(b_end - bg[0]))))
    return TransverseLTV(float(orb.period), ag, bg, res)


def extended_control_affine(erd):
    """The extended reduced dynamics as a control-affine system in
    ``x = (theta, theta', s, s')`` with input v."""

    def drift(x):
        th, thd, s, sd = x
        return np.array([thd, erd.accel(th, thd, s, sd, 0.0), sd, 0.0])

    def inp(x):
        return np.array([[0.0], [erd.psi5s(x[0], x[2])], [0.0], [1.0]])

    return ControlAffine(4, drift, inp)


def energy_implicitization(erd, orbit):
    """``H = (E - E0, s, s')`` with the orbit embedded at ``s = s' = 0``."""
    rd = erd.base_rd
    e0 = orbit.energy_level

    def param(t):
        p = orbit.param(t)
        return np.array([p[0], p[1], 0.0, 0.0])

    def dparam(t):
        d = orbit.dparam(t)
        return np.array([d[0], d[1], 0.0, 0.0])

    def implicit(x):
        return np.array([rd.energy(x[0], x[1]) - e0, x[2], x[3]])

    def jac(x):
        g = rd.energy_gradient(x[0], x[1])
        return np.array([[g[0], g[1], 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])

    return OrbitImplicitization(param, dparam, orbit.period, implicit, jac)


def vhc_coefficients(erd, orbit, t, step=PSI_S_STEP, tol=1e-9):
    """``(a12, a13, b1, eta)`` at orbit parameter t."""
    rd = erd.base_rd
    phi1, phi2 = orbit.param(t)
    d1, d2 = orbit.dparam(t)
    p1, p2, p3, _, p5 = erd.coefficients(phi1, 0.0)
    cp = erd.coefficients(phi1, step)
    cm = erd.coefficients(phi1, -step)
    ds1 = (cp[0] - cm[0]) / (2.0 * step)
    ds2 = (cp[1] - cm[1]) / (2.0 * step)
    den = d1 * phi2 + d2 * (p1 + p2 * phi2 ** 2)
    num = d1 ** 2 + d2 ** 2
    if not abs(den) > tol * num:
        raise NonTransversalityError("eta denominator vanishes at t=%.6g" % t)
    eta = num / den
    m = rd.mass(phi1)
    a12 = eta * m * phi2 * (ds1 + ds2 * phi2 ** 2)
    a13 = eta * m * phi2 ** 2 * p3
    b1 = eta * m * phi2 * p5
    return a12, a13, b1, eta


def transverse_linearize_vhc(erd, orbit, grid=LTV_GRID, unit_eta=False):
    """The 3x3 single-input transverse linearization of an extended orbit.

    The state is ``z = (E - E0, s, s')`` and time is the orbit parameter.
    By default the second and third rows carry the factor eta, which makes
    the result agree with ``transverse_linearize_general``; eta equals one
    only for a time parameterization of the orbit. ``unit_eta=True``
    returns the frequently quoted simplified matrix with unit entries in
    their place.
    """

    def pair(t):
        a12, a13, b1, eta = vhc_coefficients(erd, orbit, t)
        unit = 1.0 if unit_eta else eta
        a = np.array([[0.0, a12, a13], [0.0, 0.0, unit], [0.0, 0.0, 0.0]])
        b = np.array([[b1], [0.0], [unit]])
        return a, b

    t = np.linspace(0.0, orbit.period, grid, endpoint=False)
    pairs = [pair(ti) for ti in t]
    ag = np.array([p[0] for p in pairs])
    bg = np.array([p[1] for p in pairs])
    a_end, b_end = pair(orbit.period)
    res = max(float(np.max(np.abs(a_end - ag[0]))), float(np.max(np.abs(b_end - bg[0]))))
    return TransverseLTV(float(orbit.period), ag, bg, res)


def _sample(fn, ts):
    """Evaluate ``fn`` on an array of times, vectorized when it allows."""
    try:
        out = np.asarray(fn(ts), dtype=float)
        if out.ndim >= 1 and out.shape[0] == ts.size:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([fn(float(t)) for t in ts], dtype=float)


def _closed_loop_samples(ltv, gain, ts):
    a = ltv.A(ts)
    if gain is None:
        return a
    b = ltv.B(ts)
    if callable(gain):
        k = _sample(gain, ts).reshape(ts.size, b.shape[2], a.shape[1])
    else:
        k = np.broadcast_to(np.atleast_2d(gain), (ts.size, b.shape[2], a.shape[1]))
    return a + b @ k


def _half_grid(ltv, steps):
    steps = 2 * ltv.a_grid.shape[0] if steps is None else int(steps)
    if steps < 256:
        raise ValueError("steps must be at least 256")
    return steps, np.linspace(0.0, ltv.period, 2 * steps + 1)


def monodromy(ltv, steps=None, gain=None):
    """State-transition matrix over one period and its eigenvalues.

    ``gain`` (a callable ``t -> K(t)`` or a constant matrix) folds the
    feedback ``u = K z`` into the flow.
    """
    steps, ts = _half_grid(ltv, steps)
    mats = _closed_loop_samples(ltv, gain, ts)
    phi = rk4_tabulated(mats, np.eye(ltv.dim), ltv.period / steps)
    if not np.all(np.isfinite(phi)):
        raise IntegrationError("non-finite monodromy matrix")
    return phi, np.linalg.eigvals(phi)


@dataclass(frozen=True)
class GramianReport:
    gramian: np.ndarray
    lambda_min: float
    lambda_max: float
    controllable: bool
    stabilizable: bool
    uncontrolled_multipliers: np.ndarray

    @property
    def marginal(self):
        """True when the eigenvalue ratio is within two decades of the threshold."""
        return self.lambda_max > 0 and self.lambda_min < 1e-6 * self.lambda_max


def stabilizability_gramian(ltv, steps=None, gain=None, rel_tol=1e-8):
    """Reachability Gramian over one period and a stabilizability verdict.

    ``W' = A W + W A^T + B B^T`` from ``W(0) = 0``. When W is singular the
    verdict falls back to the multipliers acting on the complement of its
    range, which is invariant under the monodromy.
    """
    steps, ts = _half_grid(ltv, steps)
    a = _closed_loop_samples(ltv, gain, ts)
    b = ltv.B(ts)
    bb = b @ np.transpose(b, (0, 2, 1))
    h = ltv.period / steps

    def f(i, w):
        aw = a[i] @ w
        return aw + aw.T + bb[i]

    w = np.zeros((ltv.dim, ltv.dim))
    for j in range(steps):
        i = 2 * j
        k1 = f(i, w)
        k2 = f(i + 1, w + 0.5 * h * k1)
        k3 = f(i + 1, w + 0.5 * h * k2)
        k4 = f(i + 2, w + h * k3)
        w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(w)):
        raise IntegrationError("non-finite Gramian")
    w = 0.5 * (w + w.T)
    lam, vec = np.linalg.eigh(w)
    lmin, lmax = float(lam[0]), float(lam[-1])
    controllable = bool(lmax > 0 and lmin > rel_tol * lmax)
    if controllable:
        return GramianReport(w, lmin, lmax, True, True, np.array([], dtype=complex))
    phi, _ = monodromy(ltv, steps, gain)
    keep = lam <= rel_tol * max(lmax, 0.0)
    comp = vec[:, keep]
    mult = np.linalg.eigvals(comp.T @ phi @ comp)
    return GramianReport(w, lmin, lmax, False, bool(np.all(np.abs(mult) < 1.0)), mult)
