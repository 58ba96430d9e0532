"""Scenario files: a TOML description of a system, orbit, weights and run.

A mechanical scenario names a built-in system and everything the
stabilizer needs; an ``ltv`` scenario gives a constant-coefficient periodic
linear system directly, which is enough for ``analyze`` and ``design``.

Example::

    [system]
    name = "pendulum-fixture"
    params = { g = 1.0 }

    [vhc]
    a = 0.5

    [orbit]
    energy_level = 2.5
    direction = 1

    [control]
    translation = [1.0, 1.0]
    kp = 100.0
    kd = 10.0

    [weights]
    Q = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    R = 1.0

    [simulation]
    step = 1e-3
    t_final = 20.0

    [initial]
    theta = 0.0
    energy_offset = 0.3
"""

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import systems
from .controller import AugmentedState, OrbitalStabilizer


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


_SECTIONS = {"kind", "system", "vhc", "orbit", "control", "weights", "simulation", "initial",
             "batch", "random_batch", "portrait", "ltv", "output", "design"}


def _num(value, name, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("%s must be a number, got %r" % (name, value))
    value = float(value)
    if not math.isfinite(value):
        raise ScenarioError("%s must be finite" % name)
    if positive and not value > 0:
        raise ScenarioError("%s must be positive" % name)
    return value


def _matrix(value, name, shape=None):
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("%s must be a numeric array" % name) from None
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim == 1:
        m = np.diag(m) if shape is not None and shape[0] == shape[1] == m.size else m
    if shape is not None and m.shape != shape:
        raise ScenarioError("%s must have shape %s, got %s" % (name, shape, m.shape))
    if not np.all(np.isfinite(m)):
        raise ScenarioError("%s has non-finite entries" % name)
    return m


def _table(data, key):
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ScenarioError("[%s] must be a table" % key)
    return value


@dataclass
class Scenario:
    """Parsed scenario; ``raw`` keeps the source mapping for worker processes."""

    raw: dict
    kind: str = "mechanical"
    system: str = "pendulum-fixture"
    system_params: dict = field(default_factory=dict)
    translation: tuple = (1.0, 1.0)
    energy_level: float = 2.5
    direction: int = 1
    kp: float = 100.0
    kd: float = 10.0
    theta_map: str = "graph"
    literal_theta: bool = False
    s_range: tuple = (-1.0, 1.0)
    tube_radius: object = None
    Q: np.ndarray = None
    R: float = 1.0
    ltv_grid: int = 2048
    riccati_steps: int = 4096
    step: float = 1e-3
    t_final: float = 20.0
    record_every: int = 1
    initial: dict = field(default_factory=dict)
    batch: list = field(default_factory=list)
    random_batch: dict = field(default_factory=dict)
    portrait_levels: list = field(default_factory=list)
    ltv: dict = field(default_factory=dict)
    output_dir: str = "out"

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        data = copy.deepcopy(data)
        unknown = set(data) - _SECTIONS
        if unknown:
            raise ScenarioError("unknown section(s): %s" % ", ".join(sorted(unknown)))
        sc = cls(raw=data)
        sc.kind = data.get("kind", "mechanical")
        if sc.kind not in ("mechanical", "ltv"):
            raise ScenarioError("kind must be 'mechanical' or 'ltv', got %r" % sc.kind)
        weights = _table(data, "weights")
        design = _table(data, "design")
        sc.R = _num(weights.get("R", 1.0), "weights.R", positive=True)
        sc.riccati_steps = int(_num(design.get("riccati_steps", 4096), "design.riccati_steps",
                                    positive=True))
        sc.ltv_grid = int(_num(design.get("ltv_grid", 2048), "design.ltv_grid", positive=True))
        sc.output_dir = str(_table(data, "output").get("dir", "out"))
        if sc.kind == "ltv":
            sc._parse_ltv(data, weights)
        else:
            sc._parse_mechanical(data, weights)
        return sc

    def _parse_ltv(self, data, weights):
        ltv = _table(data, "ltv")
        if "A" not in ltv or "B" not in ltv:
            raise ScenarioError("[ltv] needs A and B")
        a = np.atleast_2d(_matrix(ltv["A"], "ltv.A"))
        if a.shape[0] != a.shape[1]:
            raise ScenarioError("ltv.A must be square")
        b = _matrix(ltv["B"], "ltv.B")
        b = b.reshape(a.shape[0], -1)
        period = _num(ltv.get("period", 2 * math.pi), "ltv.period", positive=True)
        self.ltv = {"A": a, "B": b, "period": period,
                    "grid": int(_num(ltv.get("grid", 256), "ltv.grid", positive=True))}
        k = a.shape[0]
        self.Q = _matrix(weights.get("Q", np.eye(k).tolist()), "weights.Q", (k, k))

    def _parse_mechanical(self, data, weights):
        system = _table(data, "system")
        self.system = system.get("name", "pendulum-fixture")
        if self.system not in systems.REGISTRY:
            raise ScenarioError("unknown system %r (known: %s)"
                                % (self.system, ", ".join(sorted(systems.REGISTRY))))
        params = dict(system.get("params", {}))
        params.update(_table(data, "vhc"))
        for k, v in params.items():
            params[k] = _num(v, "system parameter %s" % k)
        self.system_params = params
        orbit = _table(data, "orbit")
        self.energy_level = _num(orbit.get("energy_level", 2.5), "orbit.energy_level")
        self.direction = int(orbit.get("direction", 1))
        if self.direction not in (1, -1):
            raise ScenarioError("orbit.direction must be 1 or -1")
        control = _table(data, "control")
        self.translation = tuple(float(x) for x in
                                 _matrix(control.get("translation", [1.0, 1.0]),
                                         "control.translation").ravel())
        self.kp = _num(control.get("kp", 100.0), "control.kp", positive=True)
        self.kd = _num(control.get("kd", 10.0), "control.kd", positive=True)
        self.theta_map = control.get("theta_map", "graph")
        if self.theta_map not in ("graph", "nearest"):
            raise ScenarioError("control.theta_map must be 'graph' or 'nearest'")
        self.literal_theta = bool(control.get("literal_theta", False))
        sr = _matrix(control.get("s_range", [-1.0, 1.0]), "control.s_range").ravel()
        if sr.size != 2 or not sr[0] < 0 < sr[1]:
            raise ScenarioError("control.s_range must be [lo, hi] with lo < 0 < hi")
        self.s_range = (float(sr[0]), float(sr[1]))
        if "tube_radius" in control:
            self.tube_radius = _num(control["tube_radius"], "control.tube_radius", positive=True)
        self.Q = _matrix(weights.get("Q", np.eye(3).tolist()), "weights.Q", (3, 3))
        sim = _table(data, "simulation")
        self.step = _num(sim.get("step", 1e-3), "simulation.step", positive=True)
        self.t_final = _num(sim.get("t_final", 20.0), "simulation.t_final", positive=True)
        self.record_every = int(_num(sim.get("record_every", 1), "simulation.record_every",
                                     positive=True))
        self.initial = _table(data, "initial")
        batch = data.get("batch", [])
        if not isinstance(batch, list) or not all(isinstance(b, dict) for b in batch):
            raise ScenarioError("[[batch]] must be an array of tables")
        self.batch = batch
        self.random_batch = _table(data, "random_batch")
        levels = _table(data, "portrait").get("levels")
        if levels is None:
            e0 = self.energy_level
            levels = [e0 * f for f in (0.25, 0.5, 0.75, 1.0, 1.25)]
        self.portrait_levels = [_num(x, "portrait.levels") for x in levels]

    # -- products ---------------------------------------------------------

    def stabilizer(self):
        if self.kind != "mechanical":
            raise ScenarioError("this subcommand needs a mechanical scenario")
        return OrbitalStabilizer(
            system=self.system, system_params=self.system_params,
            translation=self.translation, energy_level=self.energy_level,
            direction=self.direction, kp=self.kp, kd=self.kd, Q=self.Q, R=self.R,
            theta_map=self.theta_map, literal_theta=self.literal_theta,
            s_range=self.s_range, tube_radius=self.tube_radius, ltv_grid=self.ltv_grid,
            riccati_steps=self.riccati_steps)

    def fingerprint(self):
        """SHA-256 of everything the gain depends on."""
        if self.kind == "ltv":
            key = {"kind": "ltv", "A": self.ltv["A"].tolist(), "B": self.ltv["B"].tolist(),
                   "period": self.ltv["period"]}
        else:
            key = {"kind": "mechanical", "system": self.system,
                   "params": sorted(self.system_params.items()),
                   "translation": list(self.translation), "energy_level": self.energy_level,
                   "direction": self.direction, "ltv_grid": self.ltv_grid}
        key.update(Q=self.Q.tolist(), R=self.R, riccati_steps=self.riccati_steps)
        blob = json.dumps(key, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def initial_states(self, stab, seed=None):
        """Named initial conditions: ``initial``, each ``[[batch]]`` entry, and
        ``random_batch.count`` seeded perturbations of ``initial``."""
        out = []
        if self.initial or not self.batch:
            out.append(("initial", initial_state(stab, self.initial)))
        for i, entry in enumerate(self.batch):
            out.append(("batch%03d" % i, initial_state(stab, entry)))
        count = int(self.random_batch.get("count", 0))
        if count:
            scale = _num(self.random_batch.get("scale", 0.01), "random_batch.scale",
                         positive=True)
            rng = np.random.default_rng(seed)
            base = out[0][1].as_vector()
            for i in range(count):
                x = base + scale * rng.standard_normal(base.size)
                out.append(("random%03d" % i, AugmentedState.from_vector(x)))
        return out


def initial_state(stab, entry):
    """AugmentedState from an ``[initial]`` table.

    Either explicit ``q, qdot, s, sdot``, or ``theta`` with ``energy_offset``
    to start on the augmented constraint manifold at energy ``E0 + offset``.
    """
    entry = dict(entry)
    s = _num(entry.get("s", 0.0), "initial.s")
    sd = _num(entry.get("sdot", 0.0), "initial.sdot")
    n = stab.mech_.n
    if "q" in entry:
        q = _matrix(entry["q"], "initial.q").ravel()
        qd = _matrix(entry.get("qdot", [0.0] * n), "initial.qdot").ravel()
        if q.size != n or qd.size != n:
            raise ScenarioError("initial q and qdot need %d entries" % n)
        return AugmentedState(q, qd, s, sd)
    theta = _num(entry.get("theta", 0.0), "initial.theta")
    rd, vhc = stab.reduced_, stab.vhc_
    level = stab.orbit_.energy_level + _num(entry.get("energy_offset", 0.0),
                                            "initial.energy_offset")
    room = level - float(rd.virtual_potential(theta))
    if room < 0:
        raise ScenarioError("energy E0+offset is below V(theta) at the initial theta")
    sign = int(entry.get("direction", stab.orbit_.direction or 1))
    thd = sign * math.sqrt(2.0 * room / float(rd.mass(theta)))
    el = stab.dvhc_.translation
    return AugmentedState(vhc.curve(theta) + el * s, vhc.dcurve(theta) * thd + el * sd, s, sd)


def load_scenario(path):
    """Parse a TOML scenario; syntax errors report line and column."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError("%s: %s" % (path, exc)) from None
    except OSError as exc:
        raise ScenarioError("cannot read %s: %s" % (path, exc)) from None
    sc = Scenario.from_dict(data)
    if not os.path.isabs(sc.output_dir):
        sc.output_dir = os.path.join(os.path.dirname(os.path.abspath(path)), sc.output_dir)
    return sc
