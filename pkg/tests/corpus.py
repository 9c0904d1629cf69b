"""Seeded generators of random expressions, operators and documents for property tests."""
from __future__ import annotations

import numpy as np
import sympy as sp

from sdskit.geometry import Chart, Coordinate, VectorField
from sdskit.operators import DiffOp

X, Y = sp.symbols("x y", real=True)
PLANE = Chart.euclidean(2)
PX, PY = PLANE.symbols


def random_expr(rng: np.random.Generator, depth: int, syms=(PX, PY)) -> sp.Expr:
    """Random tree over {+, *, ^k, sin, cos, exp, sqrt(1+u^2), 1/(1+u^2)} of depth <= ``depth``."""
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return syms[rng.integers(len(syms))]
        return sp.Rational(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
    op = rng.integers(8)
    a = random_expr(rng, depth - 1, syms)
    if op == 0:
        return a + random_expr(rng, depth - 1, syms)
    if op == 1:
        return a * random_expr(rng, depth - 1, syms)
    if op == 2:
        return a ** int(rng.integers(2, 4))
    if op == 3:
        return sp.sin(a)
    if op == 4:
        return sp.cos(a)
    if op == 5:
        return sp.exp(a / 4)
    if op == 6:
        return sp.sqrt(1 + a**2)
    return 1 / (1 + a**2)


def random_poly(rng: np.random.Generator, syms=(PX, PY), degree: int = 2, terms: int = 3) -> sp.Expr:
    out = sp.S.Zero
    for _ in range(terms):
        powers = rng.integers(0, degree + 1, size=len(syms))
        mono = sp.Mul(*[s**int(k) for s, k in zip(syms, powers)])
        out += int(rng.integers(-3, 4)) * mono
    return out


def random_field(rng: np.random.Generator, chart: Chart = PLANE, degree: int = 2) -> VectorField:
    return VectorField(chart, tuple(random_poly(rng, chart.symbols, degree) for _ in chart.symbols))


def random_operator(rng: np.random.Generator, chart: Chart = PLANE, order: int = 2) -> DiffOp:
    coeffs = {}
    for _ in range(4):
        alpha = tuple(int(k) for k in rng.multinomial(int(rng.integers(0, order + 1)), [1 / chart.dim] * chart.dim))
        coeffs[alpha] = random_poly(rng, chart.symbols, 1, 2)
    return DiffOp(chart, coeffs)


def random_chart(rng: np.random.Generator, name: str) -> Chart:
    n = int(rng.integers(1, 4))
    coords = []
    for i in range(n):
        kind = rng.integers(3)
        cname = f"{name.lower()}{i}"
        if kind == 0:
            coords.append(Coordinate(cname))
        elif kind == 1:
            coords.append(Coordinate(cname, period=[1, 2 * sp.pi][int(rng.integers(2))]))
        else:
            coords.append(Coordinate(cname, lower=0))
    return Chart(name, tuple(coords))


def _periodic_safe(rng: np.random.Generator, chart: Chart) -> sp.Expr:
    """A polynomial in the unbounded coordinates times trig terms in the periodic ones."""
    free = [c.symbol for c in chart.coords if not c.periodic]
    e = random_poly(rng, free, 2, 2) if free else sp.Integer(int(rng.integers(1, 4)))
    for c in chart.coords:
        if c.periodic and rng.random() < 0.7:
            k = int(rng.integers(1, 3))
            trig = [sp.sin, sp.cos][int(rng.integers(2))]
            e = e + trig(2 * sp.pi * k * c.symbol / c.period)
    return e


def random_document(rng: np.random.Generator):
    """A valid SystemDoc with charts, scalars, fields, operators, SDS, actions and systems."""
    from sdskit.dsl import SystemDoc

    doc = SystemDoc()
    if rng.random() < 0.3:
        doc.add_function("f")
    for ci in range(int(rng.integers(1, 3))):
        cname = f"C{ci}"
        chart = random_chart(rng, cname)
        doc.add_chart(cname, chart)
        fields = []
        for fi in range(int(rng.integers(1, 4))):
            name = f"V{ci}_{fi}"
            doc.add_field(name, VectorField(chart, tuple(_periodic_safe(rng, chart) for _ in chart.coords)))
            fields.append(name)
        from sdskit.geometry import ScalarField

        scalars = []
        for si in range(int(rng.integers(0, 3))):
            doc.add_scalar(f"F{ci}_{si}", ScalarField(chart, _periodic_safe(rng, chart)))
            scalars.append(f"F{ci}_{si}")
        noise = [fields[i] for i in rng.permutation(len(fields))[: int(rng.integers(0, len(fields) + 1))]]
        drift = fields[0] if rng.random() < 0.8 else None
        if drift is None and not noise:
            noise = [fields[-1]]
        doc.add_sds(f"X{ci}", drift, noise)
        if rng.random() < 0.5:
            doc.add_action(f"G{ci}", [fields[-1]])
        ops = []
        for oi in range(int(rng.integers(0, 3))):
            coeffs = {}
            for _ in range(2):
                alpha = tuple(int(k) for k in rng.multinomial(int(rng.integers(1, 3)), [1 / chart.dim] * chart.dim))
                coeffs[alpha] = _periodic_safe(rng, chart)
            doc.add_op(f"L{ci}_{oi}", DiffOp(chart, coeffs))
            ops.append(f"L{ci}_{oi}")
        # split the dimension into (p, q, r) using what is available
        lam = ops + [f"X{ci}"]
        p = int(rng.integers(1, min(len(lam), chart.dim) + 1))
        r = int(rng.integers(0, min(len(scalars), chart.dim - p) + 1))
        q = chart.dim - p - r
        if q <= len(fields):
            doc.add_system(f"S{ci}", chart, lam[:p], fields[:q], scalars[:r])
    return doc
