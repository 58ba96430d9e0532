"""Closed orbits of Lagrangian reduced dynamics.

A level set ``E = E0`` is either a rotation, on which theta sweeps a full
period with theta' of fixed sign, or an oscillation between two turning
points. Oscillations are parameterized by the angle around the ellipse-like
curve ``(theta, T(theta) theta')``, which the scaling ``T`` maps onto a
circle of radius R.
"""

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

from ._interp import UniformCubic
from .exceptions import ClassificationError, OutOfTubeError

ORBIT_GRID = 1024
ROOT_XTOL = 1e-12
TAYLOR_ZONE = 1e-3


class OrbitKind(enum.Enum):
    ROTATION = "rotation"
    OSCILLATION = "oscillation"


def _eps_rot(e0):
    return 1e-9 * (1.0 + abs(e0))


def _room(rd, e0):
    """E0 - V on the quadrature grid of one period, without the endpoint."""
    return e0 - rd.potential_grid[:-1]


def classify(rd, e0):
    """Rotation or oscillation verdict for the level set ``E = e0``.

    Raises
    ------
    ClassificationError
        For empty or equilibrium levels, multi-component level sets and
        turning points where ``V'`` vanishes.
    """
    if not rd.lagrangian_flag:
        raise ClassificationError("reduced dynamics are not Lagrangian")
    room = _room(rd, e0)
    eps = _eps_rot(e0)
    if room.max() <= eps:
        raise ClassificationError("E0=%.6g is at or below min V (empty or equilibrium level)"
                                  % e0)
    if room.min() > eps:
        return OrbitKind.ROTATION
    pos = room > 0
    changes = int(np.count_nonzero(pos != np.roll(pos, 1)))
    if changes != 2:
        raise ClassificationError(
            "level set E0=%.6g has %d components per period; only connected "
            "level sets are supported" % (e0, changes // 2))
    return OrbitKind.OSCILLATION


@dataclass(frozen=True)
class OrbitSpec:
    """A closed orbit of the reduced dynamics at energy ``energy_level``.

    ``param(s)`` returns ``(phi1, phi2)``; ``dparam(s)`` its s-derivative.
    Both read cached periodic cubic tables on a uniform s-grid. The
    parameter always increases with time: a rotation with ``direction=-1``
    is traversed as ``theta = -s``.
    """

    energy_level: float
    kind: OrbitKind
    period: float
    direction: Optional[int]
    center: Optional[float]
    radius: Optional[float]
    theta_period: float
    rd: object = field(repr=False)
    exact: Callable = field(repr=False)
    tables: UniformCubic = field(repr=False)
    turning_points: Optional[tuple] = None
    tube_margin: float = 0.0

    def param(self, s):
        phi = self.tables(s)
        if self.kind is OrbitKind.ROTATION:
            sd = self.direction * np.asarray(s, dtype=float)
            phi = phi + np.stack([sd, np.zeros_like(sd)], axis=-1)
        return phi

    def dparam(self, s):
        d = self.tables(s, 1)
        if self.kind is OrbitKind.ROTATION:
            one = np.full_like(np.asarray(s, dtype=float), float(self.direction))
            d = d + np.stack([one, np.zeros_like(one)], axis=-1)
        return d

    def scaling(self, theta):
        """T(theta); oscillations only."""
        if self.kind is not OrbitKind.OSCILLATION:
            raise ValueError("the scaling T is defined for oscillations only")
        return _scaling(self.rd, self.energy_level, self.turning_points, theta)

    def phase(self, theta, theta_dot):
        return phase(self, theta, theta_dot)

    def energy_residual(self, samples=512):
        s = np.linspace(0.0, self.period, samples, endpoint=False)
        phi = self.param(s)
        e = self.rd.energy(phi[:, 0], phi[:, 1])
        return float(np.max(np.abs(e - self.energy_level)))

    def to_csv(self, path, samples=ORBIT_GRID):
        s = np.linspace(0.0, self.period, samples, endpoint=False)
        phi = self.param(s)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "phi1", "phi2"])
            for si, (a, b) in zip(s, phi):
                w.writerow(["%.12g" % si, "%.12g" % a, "%.12g" % b])


def _turning_points(rd, e0):
    """(theta1, theta2) bracketing the positive run of E0 - V, theta1 < theta2."""
    room = _room(rd, e0)
    n = room.size
    th = rd.grid
    pos = room > 0
    up = [k for k in range(n) if pos[k] and not pos[k - 1]]
    down = [k for k in range(n) if not pos[k] and pos[k - 1]]
    if len(up) != 1 or len(down) != 1:
        raise ClassificationError("no single bracketing pair of turning points")
    T = rd.period

    def f(x):
        return e0 - rd.virtual_potential(x)

    def bracket(k):
        lo = th[k - 1] if k > 0 else th[n - 1] - T
        return lo, th[k]

    a, b = bracket(up[0])
    try:
        t1 = bisect(f, a, b, xtol=ROOT_XTOL)
        a, b = bracket(down[0])
        t2 = bisect(f, a, b, xtol=ROOT_XTOL)
    except ValueError as exc:
        raise ClassificationError("turning-point bracket failed: %s" % exc) from None
    if t2 <= t1:
        t2 += T
    c = 0.5 * (t1 + t2)
    shift = T * math.floor((c + 0.5 * T) / T)
    return t1 - shift, t2 - shift


def _scaling(rd, e0, tp, theta):
    """T(theta) = sqrt(M (theta2-theta)(theta-theta1) / (2 (E0 - V))).

    Near a turning point ``E0 - V`` is replaced by its Taylor expansion so
    that the 0/0 quotient is evaluated without cancellation.
    """
    if np.ndim(theta):
        return np.array([_scaling(rd, e0, tp, float(t)) for t in np.ravel(theta)]
                        ).reshape(np.shape(theta))
    t1, t2 = tp
    r = 0.5 * (t2 - t1)
    zone = TAYLOR_ZONE * r
    m = rd.mass(theta)
    if abs(theta - t2) < zone:
        u = theta - t2
        d1, d2, d3 = _vderivs(rd, t2)
        g = (d1 + 0.5 * d2 * u + d3 * u * u / 6.0) / (theta - t1)
    elif abs(theta - t1) < zone:
        u = theta - t1
        d1, d2, d3 = _vderivs(rd, t1)
        g = -(d1 + 0.5 * d2 * u + d3 * u * u / 6.0) / (t2 - theta)
    else:
        g = (e0 - rd.virtual_potential(theta)) / ((t2 - theta) * (theta - t1))
    if not g > 0:
        raise OutOfTubeError("scaling T undefined at theta=%.6g" % theta)
    return math.sqrt(m / (2.0 * g))


def _vderivs(rd, theta):
    """V', V'', V''' at theta from the exact relations V' = -psi1 M, M' = -2 psi2 M."""
    h = 1e-4
    d1 = rd.dpotential(theta)
    dp = rd.dpotential(theta + h)
    dm = rd.dpotential(theta - h)
    return d1, (dp - dm) / (2 * h), (dp - 2 * d1 + dm) / (h * h)


def parameterize(rd, e0, direction=1, grid=ORBIT_GRID):
    """Build the OrbitSpec of the level set ``E = e0``.

    Parameters
    ----------
    rd : ReducedDynamics
        Lagrangian reduced dynamics.
    e0 : float
        Energy level.
    direction : {+1, -1}
        Sign of theta' on a rotation; ignored for oscillations.
    grid : int
        Size of the uniform s-grid backing the cubic tables.
    """
    kind = classify(rd, e0)
    if kind is OrbitKind.ROTATION:
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

        def exact(s):
            th = direction * s
            room = e0 - rd.virtual_potential(th)
            return np.array([th, direction * math.sqrt(2.0 * room / rd.mass(th))])

        period = rd.period
        s = np.linspace(0.0, period, grid, endpoint=False)
        vals = np.array([exact(si) for si in s])
        vals[:, 0] -= direction * s
        tables = UniformCubic.periodic_from_samples(vals, period)
        return OrbitSpec(float(e0), kind, period, direction, None, None, rd.period, rd,
                         exact, tables)

    t1, t2 = _turning_points(rd, e0)
    eps = _eps_rot(e0)
    for t in (t1, t2):
        # A tangency within the energy tolerance cannot be told from V' = 0.
        d1, d2, _ = _vderivs(rd, t)
        if d1 * d1 <= max(2.0 * eps * abs(d2), eps * eps):
            raise ClassificationError("degenerate turning point at theta=%.6g (V'=0)" % t)
    c = 0.5 * (t1 + t2)
    r = 0.5 * (t2 - t1)

    def exact(s):
        th = c + r * math.cos(s)
        return np.array([th, r * math.sin(s) / _scaling(rd, e0, (t1, t2), th)])

    period = 2.0 * math.pi
    s = np.linspace(0.0, period, grid, endpoint=False)
    vals = np.array([exact(si) for si in s])
    tables = UniformCubic.periodic_from_samples(vals, period)
    return OrbitSpec(float(e0), kind, period, None, c, r, rd.period, rd, exact, tables,
                     turning_points=(t1, t2), tube_margin=0.25 * r)


def phase(orbit, theta, theta_dot):
    """Orbit parameter s in ``[0, T_gamma)`` assigned to ``(theta, theta')``."""
    if orbit.kind is OrbitKind.ROTATION:
        return (orbit.direction * float(theta)) % orbit.period
    tc = orbit.theta_period
    rel = (theta - orbit.center + 0.5 * tc) % tc - 0.5 * tc
    if abs(rel) > orbit.radius + orbit.tube_margin:
        raise OutOfTubeError("theta=%.6g outside the oscillation tube" % theta,
                             distance=abs(rel) - orbit.radius)
    tval = _scaling(orbit.rd, orbit.energy_level, orbit.turning_points, orbit.center + rel)
    return math.atan2(tval * theta_dot, rel) % (2.0 * math.pi)
