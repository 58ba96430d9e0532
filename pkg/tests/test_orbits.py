import math

import numpy as np
import pytest

from dynvhc import systems
from dynvhc.exceptions import ClassificationError, OutOfTubeError
from dynvhc.orbits import OrbitKind, classify, parameterize
from dynvhc.vhc import reduce

from conftest import graph_vhc, planar_system


@pytest.fixture(scope="module")
def pend():
    return reduce(*systems.build("pendulum-fixture"))


@pytest.fixture(scope="module")
def pvtol_rd():
    return reduce(*systems.build("pvtol-circle"))


def test_classification_of_pendulum_levels(pend):
    assert classify(pend, 2.5) is OrbitKind.ROTATION
    assert classify(pend, 1.0) is OrbitKind.OSCILLATION
    with pytest.raises(ClassificationError):
        classify(pend, 0.0)
    with pytest.raises(ClassificationError):
        classify(pend, -1.0)


def test_two_well_level_set_is_unsupported():
    mech = planar_system(grad_p=lambda q: np.array([math.sin(2 * q[0]), 0.0]))
    rd = reduce(mech, graph_vhc(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0))
    with pytest.raises(ClassificationError, match="components"):
        classify(rd, 0.5)


def test_degenerate_turning_point_is_reported(pend):
    with pytest.raises(ClassificationError):
        parameterize(pend, 2.0)


def test_rotation_parameterization(pend):
    orb = parameterize(pend, 2.5, 1)
    assert orb.kind is OrbitKind.ROTATION
    assert orb.period == pytest.approx(2 * math.pi)
    phi = orb.param(0.0)
    assert phi[0] == pytest.approx(0.0, abs=1e-14)
    assert phi[1] == pytest.approx(math.sqrt(5.0), abs=1e-10)
    s = np.linspace(0, orb.period, 512, endpoint=False)
    assert np.all(np.sign(orb.param(s)[:, 1]) == 1)
    assert orb.energy_residual() <= 1e-8


def test_reverse_rotation_runs_theta_backwards(pend):
    orb = parameterize(pend, 2.5, -1)
    s = np.linspace(0, orb.period, 512, endpoint=False)
    phi = orb.param(s)
    assert np.all(phi[:, 1] < 0)
    np.testing.assert_allclose(phi[:, 0], -s, atol=1e-12)
    np.testing.assert_allclose(orb.dparam(s)[:, 0], -1.0, atol=1e-12)
    assert orb.energy_residual() <= 1e-8


def test_oscillation_parameterization(pend):
    orb = parameterize(pend, 1.0)
    assert orb.kind is OrbitKind.OSCILLATION
    assert orb.center == pytest.approx(0.0, abs=1e-11)
    assert orb.radius == pytest.approx(math.pi / 2, abs=1e-11)
    t1, t2 = orb.turning_points
    assert pend.virtual_potential(t1) == pytest.approx(1.0, abs=1e-10)
    assert pend.virtual_potential(t2) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(orb.param(0.0), [math.pi / 2, 0.0], atol=1e-10)
    assert orb.period == pytest.approx(2 * math.pi)
    assert orb.energy_residual() <= 1e-8


def test_turning_point_limit_of_scaling(pend):
    orb = parameterize(pend, 1.0)
    r = orb.radius
    limit = math.sqrt(pend.mass(r) * r / abs(pend.dpotential(r)))
    assert orb.scaling(r) == pytest.approx(limit, rel=1e-9)
    assert orb.scaling(r - 1e-7) == pytest.approx(limit, rel=1e-6)
    assert orb.scaling(-r) == pytest.approx(limit, rel=1e-9)


def test_oscillation_maps_to_circle(pend):
    orb = parameterize(pend, 1.0)
    s = np.linspace(0, 2 * math.pi, 512, endpoint=False)
    th = orb.center + orb.radius * np.cos(s)
    phi2 = np.array([orb.exact(x)[1] for x in s])
    rad = np.hypot(th - orb.center, orb.scaling(th) * phi2)
    np.testing.assert_allclose(rad, orb.radius, atol=1e-8)


@pytest.mark.parametrize("e0,direction", [(2.5, 1), (2.5, -1), (1.0, 1), (0.3, 1)])
def test_phase_round_trip(pend, e0, direction):
    orb = parameterize(pend, e0, direction)
    s = np.linspace(0, orb.period, 512, endpoint=False)
    phi = orb.param(s)
    back = np.array([orb.phase(a, b) for a, b in phi])
    gap = (back - s + 0.5 * orb.period) % orb.period - 0.5 * orb.period
    assert np.max(np.abs(gap)) <= 1e-6


def test_phase_examples(pend):
    rot = parameterize(pend, 2.5, 1)
    assert rot.phase(1.3, -7.0) == pytest.approx(1.3)
    osc = parameterize(pend, 1.0)
    assert osc.phase(osc.center + osc.radius, 0.0) == pytest.approx(0.0, abs=1e-12)
    thd = osc.radius / osc.scaling(osc.center)
    assert osc.phase(osc.center, thd) == pytest.approx(math.pi / 2, abs=1e-12)
    with pytest.raises(OutOfTubeError):
        osc.phase(osc.center + 2 * osc.radius, 0.0)


def test_pvtol_rotation_energy_residual(pvtol_rd):
    for direction in (1, -1):
        orb = parameterize(pvtol_rd, 41.5, direction)
        assert orb.kind is OrbitKind.ROTATION
        assert orb.energy_residual() <= 1e-8


def test_orbit_csv(pend, tmp_path):
    orb = parameterize(pend, 1.0)
    path = tmp_path / "orbit.csv"
    orb.to_csv(path, samples=64)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,phi1,phi2" and len(lines) == 65
