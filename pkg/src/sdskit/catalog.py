"""Ready-made charts, systems, actions and maps used throughout the package."""
from __future__ import annotations

import itertools

import sympy as sp

from .expr import as_expr
from .geometry import SDS, Chart, Coordinate, GroupAction, VectorField, hamiltonian_field
from .reduction import QuotientMap, change_coordinates

HALF = sp.Rational(1, 2)


def _check_n(n: int) -> None:
    if not isinstance(n, int) or n < 1:
        raise ValueError("dimension n must be an integer >= 1")


def radial_chart(name: str = "r") -> Chart:
    return Chart("Rplus", (Coordinate(name, lower=0),))


def polar_chart() -> Chart:
    """Plane minus the origin in (theta, r), theta of period 2*pi."""
    return Chart("P", (Coordinate("theta", period=2 * sp.pi), Coordinate("r", lower=0)))


def energy_chart() -> Chart:
    return Chart("H", (Coordinate("h", lower=0),))


def brownian(n: int) -> SDS:
    """Standard Brownian motion on R^n: zero drift, noise d/dx_i."""
    _check_n(n)
    chart = Chart.euclidean(n)
    return SDS(chart, VectorField.zero(chart), tuple(VectorField.basis(chart, c) for c in chart.names))


def so_n_action(n: int) -> GroupAction:
    """Rotations of R^n through the n(n-1)/2 generators x_i d/dx_j - x_j d/dx_i."""
    _check_n(n)
    if n < 2:
        raise ValueError("SO(n) acts nontrivially only for n >= 2")
    chart = Chart.euclidean(n)
    s = chart.symbols
    gens = []
    for i, j in itertools.combinations(range(n), 2):
        comps = [0] * n
        comps[j] = s[i]
        comps[i] = -s[j]
        gens.append(VectorField(chart, tuple(comps)))
    return GroupAction(chart, tuple(gens), f"SO({n})")


def radius_map(n: int) -> QuotientMap:
    """r = |x| from R^n to the half line, with section r -> (r, 0, ..., 0)."""
    _check_n(n)
    src = Chart.euclidean(n)
    tgt = radial_chart()
    (r,) = tgt.symbols
    section = (r,) + (0,) * (n - 1)
    return QuotientMap(src, tgt, (sp.sqrt(sum(x**2 for x in src.symbols)),), section, "radial")


def bessel(n: int) -> SDS:
    """Bessel process of dimension n: ((n-1)/(2r)) d/dr + d/dr o dB."""
    _check_n(n)
    chart = radial_chart()
    (r,) = chart.symbols
    return SDS(chart, VectorField(chart, (sp.Rational(n - 1, 2) / r,)), (VectorField(chart, (1,)),))


def _f_of(f, arg):
    """``f`` as a function of ``arg``: None gives an undefined f, an expression in r is substituted."""
    if f is None:
        return sp.Function("f")(arg)
    if callable(f) and not isinstance(f, sp.Basic):
        return as_expr(f(arg))
    e = as_expr(f)
    syms = e.free_symbols
    if not syms:
        return e
    if len(syms) != 1:
        raise ValueError("damping coefficient must depend on r only")
    return e.subs(next(iter(syms)), arg)


def plane() -> Chart:
    return Chart.euclidean(2)


def rotation_field(chart: Chart | None = None) -> VectorField:
    chart = chart or plane()
    x, y = chart.symbols
    return VectorField(chart, (-y, x))


def damped_oscillator(f=None) -> SDS:
    """(x d/dy - y d/dx) - f(r)(x d/dx + y d/dy) + d/dx o dB1 + d/dy o dB2 on R^2."""
    chart = plane()
    x, y = chart.symbols
    fr = _f_of(f, sp.sqrt(x**2 + y**2))
    damping = VectorField(chart, (-fr * x, -fr * y))
    noise = (VectorField.basis(chart, "x"), VectorField.basis(chart, "y"))
    return SDS(chart, rotation_field(chart) + damping, noise)



def polar_inverse(chart: Chart | None = None) -> tuple[sp.Expr, sp.Expr]:
    """(x, y) = (r cos(theta), r sin(theta))."""
    chart = chart or polar_chart()
    theta, r = chart.symbols
    return (r * sp.cos(theta), r * sp.sin(theta))


def to_polar(X: SDS) -> SDS:
    return change_coordinates(X, polar_chart(), polar_inverse())


def damped_oscillator_polar(f=None) -> SDS:
    """The damped oscillator written in (theta, r) by the coordinate change."""
    chart = polar_chart()
    X = to_polar(damped_oscillator(None))
    if f is None:
        return X
    r = chart.symbols[1]
    return X.subs({sp.Function("f")(r): _f_of(f, r)})


def energy_map() -> QuotientMap:
    """h = (x^2 + y^2)/2 with section h -> (sqrt(2h), 0)."""
    src = plane()
    tgt = energy_chart()
    x, y = src.symbols
    (h,) = tgt.symbols
    return QuotientMap(src, tgt, ((x**2 + y**2) / 2,), (sp.sqrt(2 * h), 0), "energy")


def polar_radius_map() -> QuotientMap:
    """(theta, r) -> r."""
    src = polar_chart()
    tgt = radial_chart()
    theta, r = src.symbols
    return QuotientMap(src, tgt, (r,), (0, tgt.symbols[0]), "radial")


def rotation_action(chart: Chart | None = None) -> GroupAction:
    chart = chart or plane()
    return GroupAction(chart, (rotation_field(chart),), "SO(2)")


def example_rotation_sds() -> SDS:
    """x d/dy - y d/dx + d/dx o dB1 + d/dy o dB2: diffusion- but not strictly rotation invariant."""
    chart = plane()
    return SDS(chart, rotation_field(chart), (VectorField.basis(chart, "x"), VectorField.basis(chart, "y")))


def phase_space(n: int) -> tuple[Chart, sp.Matrix]:
    """R^(2n) with coordinates x1..xn, y1..yn and omega = sum dx_i ^ dy_i."""
    _check_n(n)
    names = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
    chart = Chart(f"R{2 * n}", tuple(Coordinate(c) for c in names))
    omega = sp.zeros(2 * n, 2 * n)
    for i in range(n):
        omega[i, n + i] = 1
        omega[n + i, i] = -1
    return chart, omega


def harmonic_hamiltonian_sds(n: int = 1) -> tuple[SDS, sp.Matrix]:
    """X_h + sum d/dx_i o dB + sum d/dy_i o dB with h = sum (x_i^2 + y_i^2)/2."""
    chart, omega = phase_space(n)
    h = sum(s**2 for s in chart.symbols) / 2
    Xh = hamiltonian_field(chart, omega, h)
    noise = tuple(VectorField.basis(chart, c) for c in chart.names)
    return SDS(chart, Xh, noise), omega


def circle_action_2n(n: int = 1) -> GroupAction:
    """The T^1 action generated by X_h on R^(2n)."""
    X, _ = harmonic_hamiltonian_sds(n)
    return GroupAction(X.chart, (X.drift,), "T1")


def torus_chart(p: int = 2, period=1) -> Chart:
    return Chart(f"T{p}", tuple(Coordinate(f"theta{i + 1}", period=period) for i in range(p)))


def torus_counterexample() -> tuple[SDS, QuotientMap]:
    """X = sin(2 pi theta1) d/dtheta2 on T^2 and the projection to theta2."""
    src = torus_chart(2)
    t1, t2 = src.symbols
    X = SDS(src, VectorField(src, (0, sp.sin(2 * sp.pi * t1))))
    tgt = Chart("T1", (Coordinate("theta2", period=1),))
    return X, QuotientMap(src, tgt, (t2,), name="theta2")
