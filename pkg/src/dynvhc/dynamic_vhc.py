"""Dynamic VHCs ``h(q - L s) = 0`` driven by a double integrator ``s'' = v``.

Translating the constraint curve along ``L`` gives a one-parameter family of
constraint manifolds. The feedback ``tau_star`` stabilizes the family's
augmented manifold for any ``v``, and ``extend`` returns the coefficients of
the resulting four-dimensional reduced dynamics.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._interp import UniformCubic
from .exceptions import IntervalError, RegularityError
from .integrate import rk4, rk4_scalar
from .vhc import _velocity_terms, check_regularity

S_GRID = 64
THETA_GRID = 256
SCAN_POINTS = 1024
GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class DynamicVhc:
    """A base constraint translated by ``s * translation``.

    ``valid_interval`` is the open interval of s on which regularity was
    certified, or None before certification.
    """

    base: object
    translation: np.ndarray
    valid_interval: Optional[tuple] = None

    def __post_init__(self):
        el = np.array(self.translation, dtype=float).ravel()
        if not np.any(el):
            raise ValueError("translation L must be nonzero")
        object.__setattr__(self, "translation", el)

    def constraint(self, q, s):
        return np.atleast_1d(self.base.constraint(np.asarray(q) - self.translation * s))

    def curve(self, theta, s):
        return self.base.curve(theta) + self.translation * s

    def contains(self, s):
        if self.valid_interval is None:
            return True
        lo, hi = self.valid_interval
        return lo < s < hi


def _decoupling(mech, vhc, q, theta_q):
    # A^s(q) = dh_{q - Ls} D^{-1}(q) B(q); theta_q is the base configuration q - Ls.
    return np.atleast_2d(vhc.jacobian(theta_q)) @ np.linalg.solve(mech.inertia(q),
                                                                  mech.input_matrix(q))


def certify_regularity_interval(mech, dvhc, s_range=(-1.0, 1.0), s_grid=S_GRID,
                                theta_grid=THETA_GRID):
    """Certify the s-interval on which the dynamic VHC stays regular.

    Scans outward from ``s = 0`` on each side of ``s_range`` and stops at the
    first sample where ``det A^s`` over the translated curve leaves the sign
    it has at ``s = 0``, or where ``min_theta |det A^s|`` falls below
    ``1e-8 * median |det A^0|``. Returns ``dvhc`` with ``valid_interval`` set.
    """
    lo, hi = map(float, s_range)
    if not lo < 0.0 < hi:
        raise ValueError("s_range must contain 0 in its interior")
    base = dvhc.base
    verdict = check_regularity(mech, base)
    if not verdict.regular:
        raise RegularityError("base constraint not regular (min %.3g at theta=%.6g)"
                              % (verdict.min_value, verdict.theta_min),
                              theta=verdict.theta_min)
    thetas = np.linspace(0.0, base.period, theta_grid, endpoint=False)
    curve = [base.curve(t) for t in thetas]
    el = dvhc.translation

    def dets(s):
        return np.array([np.linalg.det(_decoupling(mech, base, c + el * s, c)) for c in curve])

    d0 = dets(0.0)
    sign = np.sign(d0[0])
    tol = 1e-8 * float(np.median(np.abs(d0)))

    def regular(s):
        d = dets(s) * sign
        return bool(d.min() > tol)

    half = s_grid // 2

    def reach(end):
        last = 0.0
        for k in range(1, half + 1):
            s = end * k / half
            if regular(s):
                last = s
            else:
                break
        if last == 0.0:
            # Refine toward 0 so the interval keeps 0 in its interior.
            s = end / half
            for _ in range(40):
                s *= 0.5
                if regular(s):
                    return s
            raise RegularityError("no regular neighbourhood of s=0", s=0.0)
        return last

    return replace(dvhc, valid_interval=(reach(lo), reach(hi)))


def _decoupling_ok(a):
    if a.shape == (1, 1):
        return abs(a[0, 0]) > 1e-12, abs(a[0, 0])
    cond = np.linalg.cond(a)
    return cond < 1e12, cond


def tau_star(mech, dvhc, q, qdot, s, sdot, v, kp, kd):
    """Constraint-stabilizing input for the augmented system.

    Makes ``e = h(q - L s)`` obey ``e'' + kd e' + kp e = 0`` whatever ``v``.
    """
    return tau_star_terms(mech, dvhc, q, qdot, s, sdot, v, kp, kd)[0]


def tau_star_terms(mech, dvhc, q, qdot, s, sdot, v, kp, kd):
    """``(tau, D^{-1} B, D^{-1} (C q' + grad P))``; the last two let callers
    form the closed-loop acceleration without a second solve."""
    if not dvhc.contains(s):
        raise IntervalError("s=%.6g outside the certified interval %s"
                            % (s, dvhc.valid_interval))
    base = dvhc.base
    el = dvhc.translation
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    qb = q - el * s
    wb = qdot - el * sdot
    dh = np.atleast_2d(base.jacobian(qb))
    d = mech.inertia(q)
    dinv = np.linalg.solve(d, np.column_stack([
        mech.input_matrix(q), mech.coriolis(q, qdot) @ qdot + mech.potential_gradient(q)]))
    dinv_b = dinv[:, :-1]
    drift = dinv[:, -1]
    a = dh @ dinv_b
    ok, cond = _decoupling_ok(a)
    if not ok:
        raise RegularityError("decoupling matrix A^s singular (%.3g)" % cond,
                              s=s, condition=cond)
    e = np.atleast_1d(base.constraint(qb))
    edot = dh @ wb
    hterm = np.einsum("j,ijk,k->i", wb, base.hessian_list(qb), wb)
    rhs = dh @ drift + dh @ el * v - hterm - kp * e - kd * edot
    if a.shape == (1, 1):
        tau = rhs / a[0, 0]
    else:
        tau = np.linalg.solve(a, rhs)
    return tau, dinv_b, drift


@dataclass(frozen=True)
class ExtendedReducedDynamics:
    """Motion on the augmented manifold in coordinates ``(theta, theta', s, s')``.

    ``theta'' = psi1 + psi2 theta'^2 + psi3 theta' s' + psi4 s'^2 + psi5 v``
    with every coefficient a function of ``(theta, s)``.
    """

    coefficients: Callable = field(repr=False)
    translation: np.ndarray
    base_rd: object = field(repr=False)
    period: Optional[float] = None

    def _k(self, i):
        return lambda theta, s: self.coefficients(theta, s)[i]

    @property
    def psi1s(self):
        return self._k(0)

    @property
    def psi2s(self):
        return self._k(1)

    @property
    def psi3s(self):
        return self._k(2)

    @property
    def psi4s(self):
        return self._k(3)

    @property
    def psi5s(self):
        return self._k(4)

    def accel(self, theta, theta_dot, s, sdot, v=0.0):
        p1, p2, p3, p4, p5 = self.coefficients(theta, s)
        return p1 + p2 * theta_dot ** 2 + p3 * theta_dot * sdot + p4 * sdot ** 2 + p5 * v

    def rhs(self, t, x, v=0.0):
        th, thd, s, sd = x
        return np.array([thd, self.accel(th, thd, s, sd, v), sd, v])

    def flow(self, x0, t_final, step, grid=2048):
        """Fixed-step RK4 run with ``v = 0`` from ``x0 = (theta, theta', s, s')``.

        With ``s' = 0`` the translation stays frozen at ``s0``, so the
        coefficients are tabulated once on that slice; otherwise every
        stage evaluates them directly. Returns ``(t, xs)``.
        """
        th0, om0, s0, sd0 = map(float, x0)
        steps = int(round(t_final / step))
        t = np.arange(steps + 1) * step
        if sd0 != 0.0 or self.period is None:
            return rk4(lambda tt, x: self.rhs(tt, x), np.array(x0, dtype=float), 0.0,
                       steps * step, steps, keep=True)
        nodes = np.linspace(0.0, self.period, grid, endpoint=False)
        tab = np.array([self.coefficients(x, s0)[:2] for x in nodes])
        ev = UniformCubic.periodic_from_samples(tab, self.period).pure()

        def accel(th, om):
            p1, p2 = ev(th)
            return p1 + p2 * om * om

        th, om = rk4_scalar(accel, th0, om0, step, steps)
        return t, np.column_stack([th, om, np.full_like(th, s0), np.zeros_like(th)])


def extend(mech, dvhc, rd=None, velocity_terms="coriolis", tol=1e-10):
    """Extended reduced dynamics of a dynamic VHC.

    ``rd`` is the base ReducedDynamics, carried for energy evaluation.
    """
    base = dvhc.base
    el = dvhc.translation

    def coefficients(theta, s):
        q = base.curve(theta) + el * s
        sp = base.dcurve(theta)
        bp = np.ravel(mech.annihilator(q))
        d = mech.inertia(q)
        bd = bp @ d
        den = float(bd @ sp)
        if not abs(den) > tol:
            raise RegularityError("B_perp D sigma' vanishes at theta=%.6g, s=%.6g"
                                  % (theta, s), theta=theta, s=s)
        n2 = bd @ base.ddcurve(theta) + bp @ _velocity_terms(mech, q, sp, mode=velocity_terms)
        n3 = 2.0 * (bp @ _velocity_terms(mech, q, sp, el, mode=velocity_terms))
        n4 = bp @ _velocity_terms(mech, q, el, mode=velocity_terms)
        return (-float(bp @ mech.potential_gradient(q)) / den, -float(n2) / den,
                -float(n3) / den, -float(n4) / den, -float(bd @ el) / den)

    return ExtendedReducedDynamics(coefficients=coefficients, translation=el, base_rd=rd,
                                   period=float(base.period))


def _curve_velocity_gap(mech, vhc, p, w, theta):
    sp = vhc.dcurve(theta)
    dq = p - vhc.curve(theta)
    for i, per in enumerate(mech.space.periods):
        if per is not None:
            dq[i] = (dq[i] + 0.5 * per) % per - 0.5 * per
    thd = float(sp @ w) / float(sp @ sp)
    dw = w - sp * thd
    return float(dq @ dq + dw @ dw)


def _golden(gap, a, b, tol=1e-10):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = gap(c), gap(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = gap(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = gap(d)
    return 0.5 * (a + b)


def _newton_min(gap, t, h=1e-5, iters=8):
    """Newton iteration on finite-difference derivatives; None if it stalls."""
    f0 = gap(t)
    for _ in range(iters):
        fp, fm = gap(t + h), gap(t - h)
        d1 = (fp - fm) / (2 * h)
        d2 = (fp - 2 * f0 + fm) / (h * h)
        if not d2 > 0:
            return None
        step = d1 / d2
        if abs(step) > 0.05:
            return None
        t -= step
        f0 = gap(t)
        if abs(step) < 1e-11:
            return t
    return t if abs(step) < 1e-8 else None


def nearest_point(mech, vhc, p, w, theta_hint=None):
    """``(distance, theta)`` from ``(p, w)`` to ``{(sigma(theta), sigma'(theta) theta')}``.

    The optimal theta' for a given theta is the tangential projection, so
    only theta is searched: a coarse scan over one period followed by
    golden-section refinement. Given ``theta_hint``, Newton steps from the
    hint are tried first.
    """
    p = np.array(p, dtype=float)
    w = np.asarray(w, dtype=float)

    def gap(t):
        return _curve_velocity_gap(mech, vhc, p.copy(), w, t)

    t = None
    if theta_hint is not None:
        t = _newton_min(gap, float(theta_hint))
    if t is None:
        T = vhc.period
        grid = np.linspace(0.0, T, SCAN_POINTS, endpoint=False)
        step = grid[1] - grid[0]
        k = int(np.argmin([gap(x) for x in grid]))
        t = _golden(gap, grid[k] - step, grid[k] + step)
    return math.sqrt(max(gap(t), 0.0)), t


def gammabar_distance(mech, dvhc, q, qdot, s, sdot, theta_hint=None):
    """Distance from ``(q, q', s, s')`` to the augmented constraint manifold.

    Equal by construction to the distance of ``(q - L s, q' - L s')`` to the
    base constraint manifold.
    """
    el = dvhc.translation
    p = np.asarray(q, dtype=float) - el * s
    w = np.asarray(qdot, dtype=float) - el * sdot
    return nearest_point(mech, dvhc.base, p, w, theta_hint)[0]
