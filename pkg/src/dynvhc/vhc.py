"""Virtual holonomic constraints of order n-1 and their reduced dynamics.

On the constraint manifold the motion obeys the unforced equation
``theta'' = psi1(theta) + psi2(theta) theta'^2``. When the virtual mass
``M`` and potential ``V`` obtained by quadrature are periodic, the reduced
dynamics conserve ``E = M theta'^2 / 2 + V``.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from ._interp import UniformCubic
from .exceptions import RegularityError
from .integrate import rk4_scalar
from .mechanics import christoffel_quadratic

HESS_FD_STEP = 1e-5
QUAD_NODES = 2048
LAGRANGIAN_TOL = 1e-6


@dataclass(frozen=True)
class Vhc:
    """A constraint ``h(q) = 0`` together with a regular parameterization.

    ``curve``, ``dcurve`` and ``ddcurve`` give sigma, sigma' and sigma''.
    ``graph_index`` names the coordinate of sigma(theta) that equals theta,
    if there is one; the graph-coordinate retraction needs it.
    """

    constraint: Callable
    jacobian: Callable
    curve: Callable
    dcurve: Callable
    ddcurve: Callable
    period: float
    hessians: Optional[Callable] = None
    graph_index: Optional[int] = None

    def hessian_list(self, q):
        """Hessians of each h_i at q, by central differences of dh if needed."""
        if self.hessians is not None:
            return np.asarray(self.hessians(q), dtype=float)
        q = np.asarray(q, dtype=float)
        n = q.size
        cols = []
        for j in range(n):
            dq = np.zeros(n)
            dq[j] = HESS_FD_STEP
            cols.append((self.jacobian(q + dq) - self.jacobian(q - dq)) / (2 * HESS_FD_STEP))
        # cols[j][i, k] = d^2 h_i / dq_k dq_j
        hs = np.transpose(np.array(cols), (1, 2, 0))
        return 0.5 * (hs + np.transpose(hs, (0, 2, 1)))

    def curve_residual(self, grid=256):
        """max |h(sigma(theta))| over a uniform grid of one period."""
        thetas = np.linspace(0.0, self.period, grid, endpoint=False)
        return max(float(np.max(np.abs(self.constraint(self.curve(t))))) for t in thetas)


@dataclass(frozen=True)
class RegularityVerdict:
    regular: bool
    min_value: float
    theta_min: float
    tol: float


def _velocity_terms(mech, q, a, b=None, mode="coriolis"):
    """Symmetric bilinear velocity form ``k(q; a, b)`` with ``k(q; w, w) = C(q,w) w``."""
    if mode == "christoffel":
        return christoffel_quadratic(mech, q, a, a if b is None else b)
    if b is None:
        return mech.velocity_quadratic(q, a)
    return 0.25 * (mech.velocity_quadratic(q, a + b) - mech.velocity_quadratic(q, a - b))


def check_regularity(mech, vhc, grid_size=512, tol=1e-8):
    """Sample ``B_perp(sigma) D(sigma) sigma'`` over one period.

    The constraint is declared regular iff the smallest magnitude exceeds
    ``tol`` and the sampled values keep one sign; a sign change between
    neighbouring samples means a zero in between, located by linear
    interpolation. A failed check is a verdict, not an exception.
    """
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    thetas = np.linspace(0.0, vhc.period, grid_size, endpoint=False)
    vals = np.empty(grid_size)
    for k, th in enumerate(thetas):
        q = vhc.curve(th)
        vals[k] = float(np.ravel(mech.annihilator(q)) @ mech.inertia(q) @ vhc.dcurve(th))
    mags = np.abs(vals)
    k = int(np.argmin(mags))
    flips = np.nonzero(np.sign(vals) != np.sign(np.roll(vals, -1)))[0]
    if flips.size and mags[k] > tol:
        j = int(flips[0])
        a, b = vals[j], vals[(j + 1) % grid_size]
        step = vhc.period / grid_size
        return RegularityVerdict(False, 0.0, float(thetas[j] + step * a / (a - b)), tol)
    return RegularityVerdict(bool(mags[k] > tol), float(mags[k]), float(thetas[k]), tol)


def static_vhc_stabilizer(mech, vhc, q, qdot, kp, kd):
    """Input-output linearizing feedback making ``e = h(q)`` obey
    ``e'' + kd e' + kp e = 0``."""
    if not (kp > 0 and kd > 0):
        raise ValueError("kp and kd must be positive")
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    dh = np.atleast_2d(vhc.jacobian(q))
    d = mech.inertia(q)
    dinv_b = np.linalg.solve(d, mech.input_matrix(q))
    a = dh @ dinv_b
    cond = np.linalg.cond(a)
    if not cond < 1e12:
        raise RegularityError("decoupling matrix singular (cond=%.3g)" % cond,
                              condition=cond)
    e = np.atleast_1d(vhc.constraint(q))
    edot = dh @ qdot
    hterm = np.einsum("j,ijk,k->i", qdot, vhc.hessian_list(q), qdot)
    drift = dh @ np.linalg.solve(d, mech.coriolis(q, qdot) @ qdot + mech.potential_gradient(q))
    return np.linalg.solve(a, drift - hterm - kp * e - kd * edot)


@dataclass(frozen=True)
class ReducedDynamics:
    """Coefficients psi1, psi2 plus quadrature tables for M and V.

    ``int_psi2`` and ``potential`` are Hermite tables over ``[0, period]``;
    values beyond one period follow from the periodicity of psi1, psi2.
    """

    psi1: Callable
    psi2: Callable
    coefficients: Callable
    period: float
    int_psi2: UniformCubic
    potential: UniformCubic
    lagrangian_flag: bool
    mass_residual: float
    potential_residual: float
    grid: np.ndarray = field(repr=False)
    potential_grid: np.ndarray = field(repr=False)
    psi_table: Optional[UniformCubic] = field(default=None, repr=False)

    def _split(self, theta):
        k = math.floor(theta / self.period)
        return k, theta - k * self.period

    def mass(self, theta):
        """M(theta) = exp(-2 int_0^theta psi2)."""
        if np.ndim(theta):
            return np.array([self.mass(float(t)) for t in np.ravel(theta)]).reshape(np.shape(theta))
        k, r = self._split(float(theta))
        total = self.int_psi2(self.period)
        if self.lagrangian_flag:
            k = 0
        return math.exp(-2.0 * (k * total + self.int_psi2(r)))

    def dmass(self, theta):
        return -2.0 * self.psi2(theta) * self.mass(theta)

    def virtual_potential(self, theta):
        """V(theta) = -int_0^theta psi1 M."""
        if np.ndim(theta):
            return np.array([self.virtual_potential(float(t))
                             for t in np.ravel(theta)]).reshape(np.shape(theta))
        k, r = self._split(float(theta))
        vr = float(self.potential(r))
        if self.lagrangian_flag or k == 0:
            return vr
        mt = math.exp(-2.0 * self.int_psi2(self.period))
        vt = float(self.potential(self.period))
        vk = 0.0
        if k > 0:
            for _ in range(k):
                vk = vt + mt * vk
        else:
            for _ in range(-k):
                vk = (vk - vt) / mt
        return vk + mt ** k * vr

    def dpotential(self, theta):
        return -self.psi1(theta) * self.mass(theta)

    def accel(self, theta, theta_dot):
        p1, p2 = self.coefficients(theta)
        return p1 + p2 * theta_dot ** 2

    def rhs(self, t, x):
        return np.array([x[1], self.accel(x[0], x[1])])

    def energy(self, theta, theta_dot):
        return energy(self, theta, theta_dot)

    def flow(self, theta0, theta_dot0, t_final, step):
        """Fixed-step RK4 run of the unforced reduced dynamics.

        psi1 and psi2 are read from a periodic cubic table of the quadrature
        samples, accurate to about ``h^4`` for grid spacing h. Returns
        ``(t, theta, theta_dot)`` arrays.
        """
        steps = int(round(t_final / step))
        ev = self.psi_table.pure()

        def accel(th, om):
            p1, p2 = ev(th)
            return p1 + p2 * om * om

        th, om = rk4_scalar(accel, float(theta0), float(theta_dot0), step, steps)
        return np.arange(steps + 1) * step, th, om

    def energy_gradient(self, theta, theta_dot):
        """(dE/dtheta, dE/dtheta') using the exact relations M' = -2 psi2 M, V' = -psi1 M."""
        m = self.mass(theta)
        dth = -self.psi2(theta) * m * theta_dot ** 2 - self.psi1(theta) * m
        return np.array([dth, m * theta_dot])

    def potential_range(self):
        return float(self.potential_grid.min()), float(self.potential_grid.max())


def reduce(mech, vhc, nodes=QUAD_NODES, velocity_terms="coriolis", tol=1e-10):
    """Reduced dynamics induced by a regular VHC.

    ``velocity_terms="coriolis"`` uses the model's own ``C(q, w) w``;
    ``"christoffel"`` rebuilds the same quadratic form from dD/dq. The two
    coincide whenever C is the Christoffel-symbol Coriolis matrix.
    """

    def parts(theta):
        q = vhc.curve(theta)
        sp = vhc.dcurve(theta)
        bp = np.ravel(mech.annihilator(q))
        d = mech.inertia(q)
        den = float(bp @ d @ sp)
        if not abs(den) > tol:
            raise RegularityError("B_perp D sigma' vanishes at theta=%.6g" % theta, theta=theta)
        return q, sp, bp, d, den

    def coefficients(theta):
        q, sp, bp, d, den = parts(theta)
        num = bp @ d @ vhc.ddcurve(theta) + bp @ _velocity_terms(mech, q, sp, mode=velocity_terms)
        return -float(bp @ mech.potential_gradient(q)) / den, -float(num) / den

    def psi1(theta):
        return coefficients(theta)[0]

    def psi2(theta):
        return coefficients(theta)[1]

    T = float(vhc.period)
    th = np.linspace(0.0, T, nodes + 1)
    p1, p2 = np.array([coefficients(t) for t in th]).T
    i2 = cumulative_simpson(p2, x=th, initial=0.0)
    m = np.exp(-2.0 * i2)
    v = -cumulative_simpson(p1 * m, x=th, initial=0.0)
    int_tab = UniformCubic.hermite(th, i2, p2)
    pot_tab = UniformCubic.hermite(th, v, -p1 * m)
    m_res = abs(m[-1] - m[0])
    v_res = abs(v[-1] - v[0])
    lag = bool(m_res < LAGRANGIAN_TOL * (1 + np.abs(m).max())
               and v_res < LAGRANGIAN_TOL * (1 + np.abs(v).max()))
    return ReducedDynamics(psi1=psi1, psi2=psi2, coefficients=coefficients, period=T, int_psi2=int_tab,
                           potential=pot_tab, lagrangian_flag=lag,
                           mass_residual=float(m_res), potential_residual=float(v_res),
                           grid=th, potential_grid=v,
                           psi_table=UniformCubic.periodic_from_samples(
                               np.column_stack([p1[:-1], p2[:-1]]), T))


def energy(rd, theta, theta_dot):
    """``E = M(theta) theta'^2 / 2 + V(theta)``."""
    if not rd.lagrangian_flag:
        raise ValueError("energy is only defined for Lagrangian reduced dynamics")
    return 0.5 * rd.mass(theta) * np.asarray(theta_dot) ** 2 + rd.virtual_potential(theta)


def phase_portrait(rd, levels, points=512):
    """Level-set polylines ``(level, branch, segment, theta, theta_dot)``.

    Each level contributes an upper (+1) and lower (-1) branch sampled where
    ``E0 >= V``; gaps start a new segment.
    """
    th = np.linspace(0.0, rd.period, points + 1)
    m = rd.mass(th)
    v = rd.virtual_potential(th)
    rows = []
    for level in levels:
        room = level - v
        for branch in (1, -1):
            seg = 0
            prev = False
            for t, mm, r in zip(th, m, room):
                ok = r >= 0
                if ok:
                    if not prev and rows and rows[-1][0] == level and rows[-1][1] == branch:
                        seg += 1
                    rows.append((float(level), branch, seg, float(t),
                                 branch * math.sqrt(2.0 * r / mm)))
                prev = ok
    return rows


def write_portrait_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "branch", "segment", "theta", "theta_dot"])
        for r in rows:
            w.writerow(["%.12g" % x if isinstance(x, float) else x for x in r])
