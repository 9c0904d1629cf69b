import numpy as np
import pytest
import sympy as sp

from corpus import PLANE
from sdskit.catalog import bessel, brownian, damped_oscillator, damped_oscillator_polar, polar_chart, radial_chart
from sdskit.geometry import VectorField
from sdskit.operators import DiffOp, commutator, generator, operator_verdict
from sdskit.symbol import (
    NotElliptic,
    OrderError,
    ellipticity_check,
    fiber_independence,
    independence_rank,
    laplace_beltrami,
    metric_from_elliptic,
    momenta,
    poisson_bracket,
    principal_symbol,
    span_at,
    symbol_verdict,
)

x, y = PLANE.symbols
px, py = momenta(PLANE)
HALF = sp.Rational(1, 2)
ROT = VectorField(PLANE, (-y, x))


def P(*names, coef=1, chart=PLANE):
    return DiffOp.partial(chart, *names, coef=coef)


LAP = HALF * P("x", "x") + HALF * P("y", "y")


def test_principal_symbol_examples():
    assert principal_symbol(LAP).expr == (px**2 + py**2) / 2
    B = principal_symbol(generator(bessel(3)))
    (pr,) = momenta(radial_chart())
    assert B.expr == pr**2 / 2 and B.degree == 2
    R = principal_symbol(DiffOp.from_field(ROT))
    assert sp.expand(R.expr - (x * py - y * px)) == 0 and R.degree == 1


def test_generator_symbol_is_half_sum_of_squares():
    rng = np.random.default_rng(0)
    for X in (damped_oscillator(1), brownian(2)):
        sym = principal_symbol(generator(X))
        f = sp.lambdify(PLANE.symbols + momenta(PLANE), sym.expr)
        for _ in range(100):
            xv, pv = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            want = 0.5 * sum(float(np.dot(pv, V.at(dict(zip("xy", xv))))) ** 2 for V in X.noise)
            assert f(*xv, *pv) == pytest.approx(want, rel=1e-10)


def test_poisson_bracket_examples():
    Px = principal_symbol(P("x"))
    Fx = principal_symbol(DiffOp.multiplication(PLANE, x))
    assert poisson_bracket(Px, Fx).expr == 1
    H = principal_symbol(LAP)
    L = principal_symbol(DiffOp.from_field(ROT))
    assert poisson_bracket(H, L).expr == 0
    assert poisson_bracket(H, H).expr == 0


def test_commuting_operators_have_commuting_symbols():
    pairs = [(LAP, DiffOp.from_field(ROT))]
    Xp = damped_oscillator_polar(1)
    A = generator(Xp)
    Dth = DiffOp.partial(Xp.chart, "theta")
    pairs.append((A, Dth))
    for A, B in pairs:
        assert commutator(A, B).is_zero_operator()
        assert symbol_verdict(poisson_bracket(principal_symbol(A), principal_symbol(B))).is_zero


def test_independence_rank_examples():
    a = principal_symbol(HALF * P("x", "x"))
    assert independence_rank([a, principal_symbol(LAP)]).rank == 2
    s1 = principal_symbol(P("x"))
    s2 = principal_symbol(2 * P("x"))
    rep = independence_rank([s1, s2])
    assert rep.rank == 1 and not rep.full
    rep = independence_rank([principal_symbol(LAP), principal_symbol(DiffOp.from_field(ROT))])
    assert rep.full and rep.witness is not None


def test_rank_oracle_at_fixed_point():
    # Jacobian of (px^2/2, (px^2+py^2)/2) in (x, y, px, py) at px = py = 1
    J = np.array([[0, 0, 1, 0], [0, 0, 1, 1]], dtype=float)
    assert np.linalg.matrix_rank(J) == 2


def test_fiber_independence_is_pointwise():
    syms = [principal_symbol(HALF * P("x", "x")), principal_symbol(LAP)]
    assert fiber_independence(syms, {"x": 0.3, "y": -1.0}) == 2
    same = [principal_symbol(LAP), principal_symbol(2 * LAP)]
    assert fiber_independence(same, {"x": 0.3, "y": -1.0}) == 1


def test_span_at_examples():
    assert span_at(LAP, {"x": 0.5, "y": 1}).dim == 2
    s = span_at(HALF * P("x", "x"), {"x": 0, "y": 0})
    assert s.dim == 1
    assert abs(abs(s.basis[0][0]) - 1) < 1e-12 and abs(s.basis[0][1]) < 1e-12
    assert span_at(generator(bessel(3)), {"r": 1}).dim == 1
    with pytest.raises(OrderError):
        span_at(P("x", "x", "x"), {"x": 0, "y": 0})


def test_ellipticity_examples():
    pt = {"x": 0.2, "y": 0.4}
    assert ellipticity_check([LAP], [1.0], pt)
    assert not ellipticity_check([HALF * P("x", "x")], None, pt)
    assert ellipticity_check([HALF * P("x", "x"), HALF * P("y", "y")], [1, 1], pt)
    with pytest.raises(ValueError):
        ellipticity_check([LAP], [-1.0], pt)


def test_span_dimension_matches_ellipticity():
    pt = {"x": 0.2, "y": 0.4}
    for A in (LAP, HALF * P("x", "x"), generator(damped_oscillator(1))):
        assert (span_at(A, pt).dim == 2) == ellipticity_check([A], None, pt)


def test_metric_euclidean():
    g, V = metric_from_elliptic(LAP)
    assert g == sp.eye(2) and V.is_zero_field()


def test_metric_polar():
    P2 = polar_chart()
    theta, r = P2.symbols
    A = DiffOp(P2, {(0, 2): HALF, (2, 0): 1 / (2 * r**2), (0, 1): 1 / (2 * r)})
    g, V = metric_from_elliptic(A)
    assert g == sp.diag(r**2, 1) and V.is_zero_field()


@pytest.mark.parametrize("n", [2, 3, 5])
def test_metric_bessel(n):
    A = generator(bessel(n))
    g, V = metric_from_elliptic(A)
    (r,) = A.chart.symbols
    assert g == sp.Matrix([[1]])
    assert sp.simplify(V.components[0] - sp.Rational(n - 1, 2) / r) == 0


def test_metric_reassembles_operator():
    for A in (LAP, generator(damped_oscillator(1)), generator(bessel(4)), generator(damped_oscillator_polar(1))):
        g, V = metric_from_elliptic(A)
        back = HALF * laplace_beltrami(g, A.chart) + DiffOp.from_field(V)
        assert operator_verdict(back - A).is_zero


def test_metric_rejects_degenerate():
    with pytest.raises(NotElliptic):
        metric_from_elliptic(HALF * P("x", "x") + P("y"))
