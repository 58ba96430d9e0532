"""Orbital stabilizer for a dynamic VHC and closed-loop simulation.

The feedback has two layers. ``tau_star`` drives the state onto the
augmented constraint manifold at the rate set by ``kp, kd``; on that
manifold the double-integrator input ``v`` is a periodic-gain feedback of
``(E - E0, s, s')`` scheduled by the orbit phase.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import systems
from .dynamic_vhc import (DynamicVhc, certify_regularity_interval, extend, nearest_point,
                          tau_star, tau_star_terms)
from .exceptions import (DynVhcError, IntegrationError, OutOfTubeError, SimulationAborted,
                         StabilizabilityError)
from .orbits import parameterize
from .riccati import PeriodicWeights, solve_periodic_riccati
from .transverse import monodromy, stabilizability_gramian, transverse_linearize_vhc
from .vhc import check_regularity, reduce

TUBE_FACTOR = 0.2
NEWTON_TOL = 1e-12


@dataclass(frozen=True)
class AugmentedState:
    """State ``(q, q', s, s')`` of the mechanical system plus double integrator."""

    q: np.ndarray
    qdot: np.ndarray
    s: float = 0.0
    sdot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.array(self.q, dtype=float).ravel())
        object.__setattr__(self, "qdot", np.array(self.qdot, dtype=float).ravel())
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "sdot", float(self.sdot))
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have the same length")
        if not np.all(np.isfinite(self.as_vector())):
            raise ValueError("state has non-finite entries")

    def as_vector(self):
        return np.concatenate([self.q, self.qdot, [self.s, self.sdot]])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        n = (x.size - 2) // 2
        return cls(x[:n], x[n:2 * n], x[2 * n], x[2 * n + 1])

    def wrapped(self, space):
        return AugmentedState(space.wrap(self.q), self.qdot, self.s, self.sdot)


@dataclass
class Trajectory:
    """Sampled closed-loop run with per-sample diagnostics."""

    t: np.ndarray
    states: np.ndarray
    e: np.ndarray
    edot: np.ndarray
    energy: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    dist_gammabar: np.ndarray
    n: int = field(default=0)

    @property
    def q(self):
        return self.states[:, :self.n]

    @property
    def qdot(self):
        return self.states[:, self.n:2 * self.n]

    @property
    def s(self):
        return self.states[:, 2 * self.n]

    @property
    def sdot(self):
        return self.states[:, 2 * self.n + 1]

    def final(self):
        return AugmentedState.from_vector(self.states[-1])

    def to_csv(self, path):
        n = self.n
        header = (["t"] + ["q%d" % (i + 1) for i in range(n)]
                  + ["qd%d" % (i + 1) for i in range(n)] + ["s", "sd"]
                  + ["e%d" % (i + 1) for i in range(self.e.shape[1])]
                  + ["E", "dist_gammabar"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.t.size):
                row = [self.t[k], *self.states[k], *self.e[k], self.energy[k],
                       self.dist_gammabar[k]]
                w.writerow(["%.12g" % x for x in row])


def self_distance_scale(mech, vhc, grid=256):
    """Smallest distance between curve points more than a quarter period apart."""
    th = np.linspace(0.0, vhc.period, grid, endpoint=False)
    pts = np.array([vhc.curve(t) for t in th])
    best = math.inf
    quarter = grid // 4
    for i in range(grid):
        for j in range(i + quarter, min(grid, i + grid - quarter + 1)):
            d = float(np.linalg.norm(mech.space.difference(pts[i], pts[j])))
            best = min(best, d)
    return best


class OrbitalStabilizer(BaseEstimator):
    """Dynamic-VHC orbital stabilizer with an sklearn-style interface.

    Parameters
    ----------
    system : str or tuple
        Built-in system name, or a ``(MechanicalSystem, Vhc)`` pair.
    system_params : dict, optional
        Keyword arguments for the built-in system factory.
    translation : sequence of float
        Direction L of the dynamic VHC.
    energy_level : float
        Target energy E0 of the closed orbit.
    direction : {+1, -1}
        Rotation direction; ignored for oscillations.
    kp, kd : float
        Constraint-error gains.
    Q : array-like, optional
        3x3 state weight of the Riccati design (identity by default).
    R : float
        Input weight.
    theta_map : {"graph", "nearest"}
        Retraction used to read theta off the configuration.
    literal_theta : bool
        Apply the retraction to q instead of ``q - L s``.
    s_range : tuple
        Range scanned when certifying the regularity interval of s.
    tube_radius : float, optional
        Maximum retraction residual; defaults to a fraction of the curve's
        self-distance scale.
    ltv_grid, riccati_steps : int
        Sample counts for the transverse linearization and the Riccati sweep.
    velocity_terms : {"coriolis", "christoffel"}
        Source of the velocity-quadratic terms in the reduced dynamics.

    Attributes
    ----------
    reduced_, orbit_, dvhc_, extended_, ltv_, gramian_, gain_ :
        Products of each pipeline stage.
    multipliers_ : ndarray
        Closed-loop characteristic multipliers.
    """

    def __init__(self, system="pendulum-fixture", system_params=None, translation=(1.0, 1.0),
                 energy_level=2.5, direction=1, kp=100.0, kd=10.0, Q=None, R=1.0,
                 theta_map="graph", literal_theta=False, s_range=(-1.0, 1.0),
                 tube_radius=None, ltv_grid=2048, riccati_steps=4096,
                 velocity_terms="coriolis"):
        self.system = system
        self.system_params = system_params
        self.translation = translation
        self.energy_level = energy_level
        self.direction = direction
        self.kp = kp
        self.kd = kd
        self.Q = Q
        self.R = R
        self.theta_map = theta_map
        self.literal_theta = literal_theta
        self.s_range = s_range
        self.tube_radius = tube_radius
        self.ltv_grid = ltv_grid
        self.riccati_steps = riccati_steps
        self.velocity_terms = velocity_terms

    # -- pipeline ---------------------------------------------------------

    def _build_system(self):
        if isinstance(self.system, str):
            return systems.build(self.system, **(self.system_params or {}))
        mech, vhc = self.system
        return mech, vhc

    def weights(self):
        q = np.eye(3) if self.Q is None else np.asarray(self.Q, dtype=float)
        return PeriodicWeights(q, np.atleast_2d(float(self.R)))

    def fit(self, X=None, y=None, gain=None):
        """Run regularity, reduction, orbit, linearization and Riccati stages.

        ``X`` and ``y`` are ignored. A precomputed ``gain`` skips the Riccati
        solve; its period must match the orbit.
        """
        if not (self.kp > 0 and self.kd > 0):
            raise ValueError("kp and kd must be positive")
        if self.theta_map not in ("graph", "nearest"):
            raise ValueError("theta_map must be 'graph' or 'nearest'")
        mech, vhc = self._build_system()
        if self.theta_map == "graph" and vhc.graph_index is None:
            raise ValueError("graph retraction needs a curve with a graph coordinate")
        self.mech_, self.vhc_ = mech, vhc
        self.regularity_ = check_regularity(mech, vhc)
        if not self.regularity_.regular:
            raise DynVhcError("constraint not regular (min %.3g at theta=%.6g)"
                              % (self.regularity_.min_value, self.regularity_.theta_min))
        self.reduced_ = reduce(mech, vhc, velocity_terms=self.velocity_terms)
        self.orbit_ = parameterize(self.reduced_, self.energy_level, self.direction)
        dv = DynamicVhc(vhc, np.asarray(self.translation, dtype=float))
        self.dvhc_ = certify_regularity_interval(mech, dv, self.s_range)
        self.extended_ = extend(mech, self.dvhc_, self.reduced_,
                                velocity_terms=self.velocity_terms)
        self.ltv_ = transverse_linearize_vhc(self.extended_, self.orbit_, grid=self.ltv_grid)
        self.open_loop_multipliers_ = monodromy(self.ltv_)[1]
        self.gramian_ = stabilizability_gramian(self.ltv_)
        if gain is None:
            if not self.gramian_.stabilizable:
                raise StabilizabilityError(
                    "transverse linearization not stabilizable (Gramian eigenvalues %.3g..%.3g)"
                    % (self.gramian_.lambda_min, self.gramian_.lambda_max))
            gain = solve_periodic_riccati(self.ltv_, self.weights(), steps=self.riccati_steps)
        elif abs(gain.period - self.orbit_.period) > 1e-9 * (1.0 + self.orbit_.period):
            raise ValueError("gain period %.9g does not match orbit period %.9g"
                             % (gain.period, self.orbit_.period))
        self.gain_ = gain
        self.multipliers_ = gain.closed_loop_multipliers
        if self.tube_radius is None:
            self.tube_radius_ = TUBE_FACTOR * self_distance_scale(mech, vhc)
        else:
            self.tube_radius_ = float(self.tube_radius)
        self.n_features_in_ = 2 * mech.n + 2
        return self

    # -- feedback ---------------------------------------------------------

    def _base_point(self, q, qdot, s, sdot):
        if self.literal_theta:
            return np.asarray(q, dtype=float), np.asarray(qdot, dtype=float)
        el = self.dvhc_.translation
        return np.asarray(q, dtype=float) - el * s, np.asarray(qdot, dtype=float) - el * sdot

    def _retract(self, p, hint=None):
        vhc = self.vhc_
        if self.theta_map == "graph":
            theta = float(p[vhc.graph_index])
        else:
            theta = self._newton_theta(p, hint)
        gap = self.mech_.space.difference(p, vhc.curve(theta))
        dist = math.sqrt(float(gap @ gap))
        if dist > self.tube_radius_:
            raise OutOfTubeError("retraction residual %.4g exceeds tube radius %.4g"
                                 % (dist, self.tube_radius_), distance=dist)
        return theta

    def _newton_theta(self, p, hint=None):
        vhc = self.vhc_
        space = self.mech_.space
        if hint is None:
            grid = np.linspace(0.0, vhc.period, 256, endpoint=False)
            d = [float(np.sum(space.difference(p, vhc.curve(t)) ** 2)) for t in grid]
            theta = float(grid[int(np.argmin(d))])
        else:
            theta = float(hint)
        for _ in range(50):
            r = space.difference(vhc.curve(theta), p)
            sp = vhc.dcurve(theta)
            g = float(sp @ r)
            dg = float(sp @ sp + vhc.ddcurve(theta) @ r)
            if dg <= 0:
                dg = float(sp @ sp)
            step = g / dg
            theta -= step
            if abs(step) < NEWTON_TOL:
                break
        return theta

    def theta_estimate(self, q, qdot, s=0.0, sdot=0.0, hint=None):
        """Retracted ``(theta, theta')`` of an augmented state."""
        check_is_fitted(self, "gain_")
        return self._theta_estimate(q, qdot, s, sdot, hint)

    def _theta_estimate(self, q, qdot, s, sdot, hint):
        p, w = self._base_point(q, qdot, s, sdot)
        theta = self._retract(p, hint)
        sp = self.vhc_.dcurve(theta)
        return theta, float(sp @ w) / float(sp @ sp)

    def transverse_coordinates(self, q, qdot, s=0.0, sdot=0.0, hint=None):
        """``(E - E0, s, s')`` with E read through the retraction."""
        theta, thd = self._theta_estimate(q, qdot, s, sdot, hint)
        e = self.reduced_.energy(theta, thd) - self.orbit_.energy_level
        return np.array([e, float(s), float(sdot)]), theta, thd

    def v_star(self, q, qdot, s=0.0, sdot=0.0, hint=None):
        """Periodic-gain input of the double integrator."""
        z, theta, thd = self.transverse_coordinates(q, qdot, s, sdot, hint)
        k = self.gain_.K(self.orbit_.phase(theta, thd))
        return float(np.ravel(k @ z)[0])

    def control(self, q, qdot, s=0.0, sdot=0.0, hint=None):
        """``(tau, v)`` applied by the full feedback."""
        v = self.v_star(q, qdot, s, sdot, hint)
        tau = tau_star(self.mech_, self.dvhc_, q, qdot, s, sdot, v, self.kp, self.kd)
        return tau, v

    def closed_loop_rhs(self, t, x, hint=None):
        """Time derivative of the stacked state ``[q, q', s, s']``."""
        n = self.mech_.n
        q, qdot, s, sdot = x[:n], x[n:2 * n], x[2 * n], x[2 * n + 1]
        v = self.v_star(q, qdot, s, sdot, hint)
        tau, dinv_b, drift = tau_star_terms(self.mech_, self.dvhc_, q, qdot, s, sdot, v,
                                            self.kp, self.kd)
        qdd = dinv_b @ tau - drift
        return np.concatenate([qdot, qdd, [sdot, v]])

    # -- estimator interface ----------------------------------------------

    def _rows(self, X):
        check_is_fitted(self, "gain_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("expected %d columns [q, qdot, s, sdot], got %d"
                             % (self.n_features_in_, X.shape[1]))
        n = self.mech_.n
        return ((r[:n], r[n:2 * n], r[2 * n], r[2 * n + 1]) for r in X)

    def predict(self, X):
        """Controls ``[tau, v]`` for each row ``[q, q', s, s']``."""
        out = []
        for q, qd, s, sd in self._rows(X):
            tau, v = self.control(q, qd, s, sd)
            out.append(np.concatenate([np.ravel(tau), [v]]))
        return np.array(out)

    def transform(self, X):
        """Transverse coordinates ``(E - E0, s, s')`` for each row."""
        return np.array([self.transverse_coordinates(q, qd, s, sd)[0]
                         for q, qd, s, sd in self._rows(X)])

    # -- simulation -------------------------------------------------------

    def simulate(self, initial, t_final, step=1e-3, record_every=1):
        """Fixed-step RK4 run of the closed loop.

        Diagnostics are evaluated at every recorded sample. Raises
        SimulationAborted, carrying the partial trajectory, if the state
        leaves the retraction tube or the certified s-interval, or becomes
        non-finite.
        """
        check_is_fitted(self, "gain_")
        if not step > 0:
            raise ValueError("step must be positive")
        if not isinstance(initial, AugmentedState):
            if isinstance(initial, np.ndarray) and initial.ndim == 1:
                initial = AugmentedState.from_vector(initial)
            else:
                initial = AugmentedState(*initial)
        mech = self.mech_
        n = mech.n
        steps = int(round(t_final / step))
        x = initial.as_vector()
        rec = _Recorder(self, n)
        hint = [None]

        def rhs(t, y):
            return self.closed_loop_rhs(t, y, hint[0])

        t = 0.0
        try:
            hint[0] = rec.add(t, x, hint[0])
            for k in range(1, steps + 1):
                k1 = rhs(t, x)
                k2 = rhs(t + 0.5 * step, x + 0.5 * step * k1)
                k3 = rhs(t + 0.5 * step, x + 0.5 * step * k2)
                k4 = rhs(t + step, x + step * k3)
                x = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                t = k * step
                if not np.all(np.isfinite(x)):
                    raise IntegrationError("non-finite state at t=%.6g" % t)
                if k % record_every == 0 or k == steps:
                    hint[0] = rec.add(t, x, hint[0])
                elif self.theta_map == "nearest":
                    hint[0] = self._theta_estimate(*_split(x, n), hint[0])[0]
        except DynVhcError as exc:
            raise SimulationAborted("simulation aborted at t=%.6g: %s" % (t, exc), time=t,
                                    trajectory=rec.build(), cause=exc) from exc
        return rec.build()


def _split(x, n):
    return x[:n], x[n:2 * n], x[2 * n], x[2 * n + 1]


class _Recorder:
    def __init__(self, stab, n):
        self.stab = stab
        self.n = n
        self.rows = []

    def add(self, t, x, hint):
        stab = self.stab
        q, qd, s, sd = _split(x, self.n)
        z, theta, thd = stab.transverse_coordinates(q, qd, s, sd, hint)
        dv = stab.dvhc_
        qb = q - dv.translation * s
        wb = qd - dv.translation * sd
        e = np.atleast_1d(dv.base.constraint(qb))
        edot = np.atleast_2d(dv.base.jacobian(qb)) @ wb
        dist, _ = nearest_point(stab.mech_, dv.base, qb, wb,
                                theta_hint=theta if self.rows else None)
        self.rows.append((t, x.copy(), e, edot, z[0] + stab.orbit_.energy_level, theta, thd,
                          dist))
        return theta

    def build(self):
        if not self.rows:
            empty = np.empty((0,))
            return Trajectory(empty, np.empty((0, 2 * self.n + 2)), np.empty((0, self.n - 1)),
                              np.empty((0, self.n - 1)), empty, empty, empty, empty, self.n)
        cols = list(zip(*self.rows))
        return Trajectory(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
                          np.array(cols[3]), np.array(cols[4]), np.array(cols[5]),
                          np.array(cols[6]), np.array(cols[7]), self.n)
