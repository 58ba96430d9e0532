import math

import numpy as np
import pytest

from dynvhc.controller import OrbitalStabilizer
from dynvhc.mechanics import ConfigSpace, MechanicalSystem
from dynvhc.vhc import Vhc

PVTOL_SETTINGS = dict(system="pvtol-circle", energy_level=41.5, direction=-1, R=400.0,
                      Q=np.diag([0.5, 1e4, 1.0]), translation=(1.0, 1.0))


def planar_system(grad_p=None, inertia=None, partials=None):
    """D = I (or given), B = (0, 1), B_perp = (1, 0), angle q1 and linear q2."""
    zero = np.zeros((2, 2))
    grad_p = grad_p or (lambda q: np.zeros(2))
    inertia = inertia or (lambda q: np.eye(2))
    return MechanicalSystem(
        space=ConfigSpace(2, (2 * math.pi, None)),
        inertia=inertia,
        coriolis=lambda q, qd: zero,
        potential_gradient=grad_p,
        input_matrix=lambda q: np.array([[0.0], [1.0]]),
        annihilator=lambda q: np.array([1.0, 0.0]),
        inertia_partials=partials,
    )


def graph_vhc(f, df, ddf, period=2 * math.pi):
    """The constraint ``q2 = f(q1)`` with curve ``sigma = (theta, f(theta))``."""
    return Vhc(
        constraint=lambda q: np.array([q[1] - f(q[0])]),
        jacobian=lambda q: np.array([[-df(q[0]), 1.0]]),
        hessians=lambda q: np.array([[[-ddf(q[0]), 0.0], [0.0, 0.0]]]),
        curve=lambda t: np.array([t, f(t)]),
        dcurve=lambda t: np.array([1.0, df(t)]),
        ddcurve=lambda t: np.array([0.0, ddf(t)]),
        period=period,
        graph_index=0,
    )


@pytest.fixture(scope="session")
def pendulum_stab():
    return OrbitalStabilizer().fit()


@pytest.fixture(scope="session")
def pvtol_stab():
    return OrbitalStabilizer(**PVTOL_SETTINGS).fit()
