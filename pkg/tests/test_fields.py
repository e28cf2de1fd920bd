import numpy as np
import pytest
import sympy

from stokes_hvi.fields import FIELDS, make_field, manufactured, manufactured_exprs

X, Y, T, MU = sympy.symbols("x y t mu", real=True)


def test_manufactured_velocity_structure():
    (ux, uy), p, _ = manufactured_exprs()
    assert sympy.simplify(sympy.diff(ux, X) + sympy.diff(uy, Y)) == 0
    for side, val in ((X, 0), (X, 1), (Y, 1)):
        assert sympy.simplify(ux.subs(side, val)) == 0
        assert sympy.simplify(uy.subs(side, val)) == 0
    # no penetration and zero shear stress on the slip side y = 0
    assert sympy.simplify(uy.subs(Y, 0)) == 0
    assert sympy.simplify((sympy.diff(ux, Y) + sympy.diff(uy, X)).subs(Y, 0)) == 0
    assert sympy.integrate(sympy.integrate(p, (X, 0, 1)), (Y, 0, 1)) == 0


def test_manufactured_numeric_matches_symbolic():
    (ux, _), _, (fx, _) = manufactured_exprs()
    x, y, t = 0.3, 0.7, 0.4
    u = manufactured("u", mu=2.0)
    f = manufactured("f", mu=2.0)
    assert u(np.array([x]), np.array([y]), t)[0][0] == pytest.approx(float(ux.subs({X: x, Y: y, T: t})))
    assert f(np.array([x]), np.array([y]), t)[0][0] == pytest.approx(
        float(fx.subs({X: x, Y: y, T: t, MU: 2.0})))


def test_steady_variant_is_time_independent():
    u = manufactured("u", steady=True)
    x = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(u(x, x, 0.0)[0], u(x, x, 3.0)[0])


@pytest.mark.parametrize("name", sorted(FIELDS))
def test_fields_broadcast(name):
    f = make_field(name)
    x = np.linspace(0, 1, 7)
    fx, fy = f(x, 0.5 * x, 0.25)
    assert fx.shape == x.shape and fy.shape == x.shape


@pytest.mark.parametrize("time,t,expected", [
    ("const", 2.0, 1.0), ("linear", 2.0, 1.0 + 2 * 0.5), ("exp", 2.0, np.exp(-1.0)),
    ("sin", 2.0, np.sin(1.0)),
])
def test_time_profiles(time, t, expected):
    fx, _ = make_field("uniform", ax=1.0, time=time, rate=0.5)(np.zeros(1), np.zeros(1), t)
    assert fx[0] == pytest.approx(expected)


def test_unknown_selectors():
    with pytest.raises(ValueError):
        make_field("gaussian")
    with pytest.raises(ValueError):
        make_field("uniform", time="cosine")
    with pytest.raises(ValueError):
        manufactured("q")
