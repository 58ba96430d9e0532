"""Fixed-step classical Runge-Kutta helpers."""

import numpy as np

from .exceptions import IntegrationError


def rk4_step(rhs, t, x, h):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(rhs, x0, t0, t1, steps, keep=False):
    """Integrate ``x' = rhs(t, x)`` from ``t0`` to ``t1`` in ``steps`` steps.

    Returns the final state, or ``(t, xs)`` with every intermediate state
    when ``keep`` is true. ``x`` may be any ndarray shape.
    """
    x = np.array(x0, dtype=float)
    h = (t1 - t0) / steps
    if keep:
        xs = np.empty((steps + 1,) + x.shape)
        xs[0] = x
    for k in range(steps):
        x = rk4_step(rhs, t0 + k * h, x, h)
        if keep:
            xs[k + 1] = x
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite state after %d RK4 steps" % steps)
    if keep:
        return np.linspace(t0, t1, steps + 1), xs
    return x


def rk4_scalar(accel, theta, theta_dot, h, steps):
    """RK4 for ``theta'' = accel(theta, theta')`` on plain floats.

    Returns arrays of theta and theta' at the ``steps + 1`` grid nodes.
    """
    th = np.empty(steps + 1)
    om = np.empty(steps + 1)
    th[0], om[0] = theta, theta_dot
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(steps):
        a1 = accel(theta, theta_dot)
        w2 = theta_dot + half * a1
        a2 = accel(theta + half * theta_dot, w2)
        w3 = theta_dot + half * a2
        a3 = accel(theta + half * w2, w3)
        w4 = theta_dot + h * a3
        a4 = accel(theta + h * w3, w4)
        theta += sixth * (theta_dot + 2.0 * w2 + 2.0 * w3 + w4)
        theta_dot += sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        th[k + 1], om[k + 1] = theta, theta_dot
    if not (np.isfinite(theta) and np.isfinite(theta_dot)):
        raise IntegrationError("non-finite state after %d RK4 steps" % steps)
    return th, om


def rk4_tabulated(mats, x0, h, backward=False, keep=False, every=None, fix=None):
    """RK4 for ``x' = M(t) x`` with M pre-sampled at half steps.

    ``mats[i]`` is M at ``t0 + i h / 2`` for ``i = 0 .. 2 N``. Backward runs
    start at the last sample and step toward ``t0``. ``fix`` is applied to
    the state every ``every`` steps (e.g. re-orthonormalization).
    ``keep`` returns the states at every grid node, in forward time order.
    """
    n = (len(mats) - 1) // 2
    x = np.array(x0, dtype=float)
    out = np.empty((n + 1,) + x.shape) if keep else None
    if backward:
        h = -h
        order = range(n, 0, -1)
    else:
        order = range(n)
    if keep:
        out[n if backward else 0] = x
    for count, j in enumerate(order, 1):
        i = 2 * j
        step = -2 if backward else 2
        m0, m1, m2 = mats[i], mats[i + step // 2], mats[i + step]
        k1 = m0 @ x
        k2 = m1 @ (x + 0.5 * h * k1)
        k3 = m1 @ (x + 0.5 * h * k2)
        k4 = m2 @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if fix is not None and every and count % every == 0:
            x = fix(x)
        if keep:
            out[j - 1 if backward else j + 1] = x
    if not np.all(np.isfinite(x)):
        raise IntegrationError("non-finite state after %d RK4 steps" % n)
    return out if keep else x
