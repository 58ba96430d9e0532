"""Built-in systems, each with a default constraint curve.

``pendulum-fixture``
    Two DOFs, identity inertia, gravity on the unactuated angle q1 and an
    actuated displacement q2 slaved by ``q2 = a sin q1``. A spring of
    stiffness ``k`` acting on ``q2 - a sin q1`` couples the two; it is slack
    on the constraint, so the reduced dynamics are exactly the pendulum
    ``theta'' = -g sin theta``. Without the spring (``k = 0``) q1 evolves
    independently of the input and no orbit can be stabilized.

``pvtol-circle``
    The PVTOL aircraft with its centre of mass held on the unit circle:
    q1 is the roll angle, q2 the position on the circle, and u the
    tangential input. The constraint ``q1 = f(q2)`` uses the roll profile
    ``f = theta - u(theta)`` where ``u' = sqrt(2) + sin u``, shifted so that
    the aircraft is upright (``f = 0``) at the top of the circle. Along it
    ``B_perp D sigma'`` is the constant ``1 - sqrt(2)`` and the reduced
    dynamics are Lagrangian.
"""

import math

import numpy as np

from .mechanics import ConfigSpace, MechanicalSystem
from .vhc import Vhc

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)


def pendulum_fixture(g=1.0, a=0.5, k=1.0):
    space = ConfigSpace(2, (TWO_PI, None))
    zero2 = np.zeros((2, 2))

    def potential_gradient(q):
        stretch = k * (q[1] - a * math.sin(q[0]))
        return np.array([g * math.sin(q[0]) - a * math.cos(q[0]) * stretch, stretch])

    mech = MechanicalSystem(
        space=space,
        inertia=lambda q: np.eye(2),
        coriolis=lambda q, qd: zero2,
        potential_gradient=potential_gradient,
        input_matrix=lambda q: np.array([[0.0], [1.0]]),
        annihilator=lambda q: np.array([1.0, 0.0]),
        inertia_partials=lambda q: [zero2, zero2],
        name="pendulum-fixture",
    )
    vhc = Vhc(
        constraint=lambda q: np.array([q[1] - a * math.sin(q[0])]),
        jacobian=lambda q: np.array([[-a * math.cos(q[0]), 1.0]]),
        hessians=lambda q: np.array([[[a * math.sin(q[0]), 0.0], [0.0, 0.0]]]),
        curve=lambda th: np.array([th, a * math.sin(th)]),
        dcurve=lambda th: np.array([1.0, a * math.cos(th)]),
        ddcurve=lambda th: np.array([0.0, -a * math.sin(th)]),
        period=TWO_PI,
        graph_index=0,
    )
    return mech, vhc


def roll_profile(theta):
    """Constraint roll angle ``f(q2)`` used by the PVTOL built-in."""
    psi = theta + 0.25 * math.pi
    num = (SQRT2 - 1.0) * math.sin(psi) + 1.0 + math.cos(psi)
    den = (1.0 + SQRT2) + (SQRT2 - 1.0) * math.cos(psi) - math.sin(psi)
    return -0.25 * math.pi + 2.0 * math.atan(num / den)


def roll_profile_derivatives(theta):
    """(f, f', f'') from ``u = theta - f`` and ``u' = sqrt(2) + sin u``."""
    f = roll_profile(theta)
    u = theta - f
    du = SQRT2 + math.sin(u)
    return f, 1.0 - du, -math.cos(u) * du


def pvtol_circle(g=9.81, ratio=1.0):
    """PVTOL on the circle; ``ratio`` is the model constant mu/epsilon."""
    space = ConfigSpace(2, (TWO_PI, TWO_PI))
    inertia = np.diag([1.0 / ratio, 1.0])
    zero2 = np.zeros((2, 2))

    def coriolis(q, qd):
        return np.array([[0.0, math.cos(q[0] - q[1]) * qd[1]], [0.0, 0.0]])

    mech = MechanicalSystem(
        space=space,
        inertia=lambda q: inertia,
        coriolis=coriolis,
        potential_gradient=lambda q: np.array([-g * math.sin(q[0]), 0.0]),
        input_matrix=lambda q: np.array([[math.sin(q[0] - q[1])], [1.0]]),
        annihilator=lambda q: np.array([1.0, -math.sin(q[0] - q[1])]),
        inertia_partials=lambda q: [zero2, zero2],
        name="pvtol-circle",
    )

    def curve(th):
        return np.array([roll_profile(th), th])

    def dcurve(th):
        return np.array([roll_profile_derivatives(th)[1], 1.0])

    def ddcurve(th):
        return np.array([roll_profile_derivatives(th)[2], 0.0])

    def hessians(q):
        return np.array([[[0.0, 0.0], [0.0, -roll_profile_derivatives(q[1])[2]]]])

    vhc = Vhc(
        constraint=lambda q: np.array([q[0] - roll_profile(q[1])]),
        jacobian=lambda q: np.array([[1.0, -roll_profile_derivatives(q[1])[1]]]),
        hessians=hessians,
        curve=curve,
        dcurve=dcurve,
        ddcurve=ddcurve,
        period=TWO_PI,
        graph_index=1,
    )
    return mech, vhc


REGISTRY = {
    "pendulum-fixture": pendulum_fixture,
    "pvtol-circle": pvtol_circle,
}


def build(name, **params):
    """Instantiate a registered system by name; returns ``(mech, vhc)``."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError("unknown system %r (known: %s)" % (name, ", ".join(sorted(REGISTRY))))
    return factory(**params)
