"""Named analytic vector fields used as initial data and body forces.

Every field is a callable ``(x, y, t=0.0) -> (fx, fy)`` on numpy arrays.
"""

import numpy as np
import sympy

_X, _Y, _T, _MU = sympy.symbols("x y t mu", real=True)


def _time_factor(kind, rate):
    if kind == "const":
        return lambda t: 1.0
    if kind == "linear":
        return lambda t: 1.0 + rate * t
    if kind == "exp":
        return lambda t: np.exp(-rate * t)
    if kind == "sin":
        return lambda t: np.sin(rate * t)
    raise ValueError(f"unknown time profile {kind!r}")


def zero(**_):
    def f(x, y, t=0.0):
        z = np.zeros_like(np.asarray(x, dtype=float))
        return z, z.copy()
    return f


def uniform(ax=1.0, ay=0.0, time="const", rate=0.0):
    tf = _time_factor(time, rate)

    def f(x, y, t=0.0):
        one = np.ones_like(np.asarray(x, dtype=float))
        c = tf(t)
        return ax * c * one, ay * c * one
    return f


def poly(ax=1.0, ay=0.0, px=0, py=1, time="const", rate=0.0):
    """``(ax, ay) * x^px * (1 - y)^py``; with py >= 1 it pushes hardest at y = 0."""
    tf = _time_factor(time, rate)

    def f(x, y, t=0.0):
        base = np.asarray(x, dtype=float) ** px * (1.0 - np.asarray(y, dtype=float)) ** py
        c = tf(t)
        return ax * c * base, ay * c * base
    return f


def trig(ax=1.0, ay=0.0, m=1, n=1, time="const", rate=0.0, phase=0.0):
    tf = _time_factor(time, rate)

    def f(x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = tf(t)
        return (ax * c * np.sin(np.pi * m * x + phase) * np.cos(np.pi * n * y),
                ay * c * np.cos(np.pi * m * x) * np.sin(np.pi * n * y + phase))
    return f


def indicator(ax=1.0, ay=0.0, x0=0.5, time="const", rate=0.0):
    """Constant vector on the half-domain ``x < x0``, zero elsewhere."""
    tf = _time_factor(time, rate)

    def f(x, y, t=0.0):
        chi = (np.asarray(x, dtype=float) < x0).astype(float)
        c = tf(t)
        return ax * c * chi, ay * c * chi
    return f


def manufactured_exprs():
    """Symbolic velocity, pressure and body force of the decaying test flow.

    The velocity is the curl of ``g(x) h(y) exp(-t)`` with
    ``g = x^2 (1-x)^2`` and ``h = y/2 - 3y^3/2 + y^4``: it vanishes on
    x = 0, x = 1 and y = 1, has zero normal component and zero tangential
    stress on y = 0, and is exactly divergence free.
    """
    g = _X**2 * (1 - _X) ** 2
    h = sympy.Rational(1, 2) * _Y - sympy.Rational(3, 2) * _Y**3 + _Y**4
    phi = g * h * sympy.exp(-_T)
    ux = sympy.diff(phi, _Y)
    uy = -sympy.diff(phi, _X)
    p = (_X - sympy.Rational(1, 2)) * (_Y - sympy.Rational(1, 2)) * sympy.exp(-_T)
    lap = [sympy.diff(c, _X, 2) + sympy.diff(c, _Y, 2) for c in (ux, uy)]
    fx = sympy.diff(ux, _T) - _MU * lap[0] + sympy.diff(p, _X)
    fy = sympy.diff(uy, _T) - _MU * lap[1] + sympy.diff(p, _Y)
    return (ux, uy), p, (fx, fy)


def _lambdify_pair(exprs, mu):
    fns = [sympy.lambdify((_X, _Y, _T), e.subs(_MU, mu), "numpy") for e in exprs]

    def f(x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        return tuple(np.broadcast_to(fn(x, y, t), x.shape).astype(float) for fn in fns)
    return f


def manufactured(which="u", mu=1.0, steady=False):
    (ux, uy), p, (fx, fy) = manufactured_exprs()
    if steady:
        ux, uy, p = (e.subs(_T, 0) for e in (ux, uy, p))
        lap = [sympy.diff(c, _X, 2) + sympy.diff(c, _Y, 2) for c in (ux, uy)]
        fx = -_MU * lap[0] + sympy.diff(p, _X)
        fy = -_MU * lap[1] + sympy.diff(p, _Y)
    if which == "u":
        return _lambdify_pair((ux, uy), mu)
    if which == "f":
        return _lambdify_pair((fx, fy), mu)
    if which == "p":
        fn = sympy.lambdify((_X, _Y, _T), p, "numpy")
        return lambda x, y, t=0.0: np.broadcast_to(fn(x, y, t), np.shape(x)).astype(float)
    raise ValueError(f"unknown manufactured component {which!r}")


FIELDS = {
    "zero": zero,
    "uniform": uniform,
    "poly": poly,
    "trig": trig,
    "indicator": indicator,
    "manufactured": manufactured,
}


def make_field(name, **params):
    try:
        builder = FIELDS[name]
    except KeyError:
        raise ValueError(f"unknown field {name!r}; known: {', '.join(FIELDS)}") from None
    return builder(**params)
