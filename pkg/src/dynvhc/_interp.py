"""Fast piecewise-cubic tables on uniform grids.

scipy builds the coefficients; evaluation is re-implemented so that scalar
queries inside integrator loops avoid scipy's per-call overhead.
"""

import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline


class UniformCubic:
    """Piecewise cubic on ``[t0, t0 + N*h]`` with uniform breakpoints.

    ``coeffs`` has shape ``(4, N, *value_shape)``, highest power first,
    the layout ``scipy.interpolate.PPoly`` uses.
    """

    def __init__(self, t0, h, coeffs, periodic):
        self.t0 = float(t0)
        self.h = float(h)
        self.c = np.ascontiguousarray(coeffs)
        self.n = self.c.shape[1]
        self.periodic = periodic
        self.span = self.n * self.h

    @classmethod
    def periodic_from_samples(cls, values, period):
        """Periodic spline through ``values[k]`` at ``t = k * period / N``.

        ``values`` holds N samples over one period, without the repeated
        endpoint.
        """
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        t = np.linspace(0.0, period, n + 1)
        y = np.concatenate([values, values[:1]], axis=0)
        sp = CubicSpline(t, y, bc_type="periodic", axis=0)
        return cls(0.0, period / n, sp.c, periodic=True)

    @classmethod
    def hermite(cls, t, values, derivatives):
        t = np.asarray(t, dtype=float)
        sp = CubicHermiteSpline(t, values, derivatives, axis=0)
        return cls(t[0], t[1] - t[0], sp.c, periodic=False)

    def pure(self):
        """Scalar evaluator ``t -> list of floats`` built on Python lists.

        Roughly ten times cheaper per call than ``__call__`` for tables with a
        handful of components, which matters inside fixed-step integrators.
        """
        rows = np.moveaxis(self.c, 0, 1).reshape(self.n, 4, -1).tolist()
        t0, h, n, span, periodic = self.t0, self.h, self.n, self.span, self.periodic
        width = range(len(rows[0][0]))

        def evaluate(t):
            x = ((t - t0) % span) / h if periodic else min(max((t - t0) / h, 0.0), float(n))
            i = int(x)
            if i >= n:
                i = n - 1
            dt = (x - i) * h
            a, b, c, d = rows[i]
            return [((a[k] * dt + b[k]) * dt + c[k]) * dt + d[k] for k in width]

        return evaluate

    def _locate(self, t):
        if self.periodic:
            x = ((t - self.t0) % self.span) / self.h
            i = min(int(x), self.n - 1)
            return i, (x - i) * self.h
        i = min(max(math.floor((t - self.t0) / self.h), 0), self.n - 1)
        return i, t - self.t0 - i * self.h

    def __call__(self, t, nu=0):
        if np.ndim(t) == 0:
            i, dt = self._locate(float(t))
            c = self.c[:, i]
            if nu == 0:
                return ((c[0] * dt + c[1]) * dt + c[2]) * dt + c[3]
            if nu == 1:
                return (3.0 * c[0] * dt + 2.0 * c[1]) * dt + c[2]
            if nu == 2:
                return 6.0 * c[0] * dt + 2.0 * c[1]
            raise ValueError("nu must be 0, 1 or 2")
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        if self.periodic:
            x = ((flat - self.t0) % self.span) / self.h
            i = np.minimum(x.astype(int), self.n - 1)
            dt = (x - i) * self.h
        else:
            i = np.clip(np.floor((flat - self.t0) / self.h).astype(int), 0, self.n - 1)
            dt = flat - self.t0 - i * self.h
        c = self.c[:, i]
        dt = dt.reshape((-1,) + (1,) * (self.c.ndim - 2))
        if nu == 0:
            out = ((c[0] * dt + c[1]) * dt + c[2]) * dt + c[3]
        elif nu == 1:
            out = (3.0 * c[0] * dt + 2.0 * c[1]) * dt + c[2]
        elif nu == 2:
            out = 6.0 * c[0] * dt + 2.0 * c[1]
        else:
            raise ValueError("nu must be 0, 1 or 2")
        return out.reshape(t.shape + self.c.shape[2:])
