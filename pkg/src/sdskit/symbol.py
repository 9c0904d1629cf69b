"""Principal symbols on the cotangent bundle and what they tell about operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy as sp

from .expr import ZeroVerdict, instantiate, is_zero, render, simplify
from .geometry import Chart, VectorField, same_chart
from .operators import DiffOp, as_operator


class OrderError(ValueError):
    pass


class NotElliptic(ValueError):
    pass


def momenta(chart: Chart) -> tuple[sp.Symbol, ...]:
    return tuple(sp.Symbol(f"p_{n}", real=True) for n in chart.names)


@dataclass(frozen=True)
class CotangentPoly:
    """Polynomial in the fibre momenta p_j with coefficients on the chart."""

    chart: Chart
    expr: sp.Expr
    degree: int

    @property
    def momenta(self) -> tuple[sp.Symbol, ...]:
        return momenta(self.chart)

    def __call__(self, x: Sequence[float], p: Sequence[float]) -> float:
        subs = dict(zip(self.chart.symbols, map(float, x)))
        subs.update(zip(self.momenta, map(float, p)))
        return float(self.expr.subs(subs))

    def __str__(self) -> str:
        return render(self.expr)


def principal_symbol(A) -> CotangentPoly:
    """Top-order coefficients of A turned into momentum monomials."""
    A = as_operator(A)
    m = A.order
    ps = momenta(A.chart)
    total = sp.S.Zero
    for alpha, c in A.coeffs.items():
        if sum(alpha) != m:
            continue
        mono = sp.Mul(*[p**k for p, k in zip(ps, alpha)])
        total += c * mono
    return CotangentPoly(A.chart, simplify(total), m)


def poisson_bracket(P: CotangentPoly, Q: CotangentPoly) -> CotangentPoly:
    """Canonical bracket sum_j dP/dp_j dQ/dx_j - dP/dx_j dQ/dp_j."""
    chart = same_chart(P.chart, Q.chart)
    ps = momenta(chart)
    total = sp.S.Zero
    for x, p in zip(chart.symbols, ps):
        total += sp.diff(P.expr, p) * sp.diff(Q.expr, x) - sp.diff(P.expr, x) * sp.diff(Q.expr, p)
    return CotangentPoly(chart, simplify(total), max(P.degree + Q.degree - 1, 0))


def symbol_verdict(P: CotangentPoly, samples: int = 64, seed: int = 0) -> ZeroVerdict:
    """Zero test of a symbol on sampled cotangent points."""
    return is_zero(P.expr, _CotangentDomain(P.chart), samples, seed)


class _CotangentDomain:
    def __init__(self, chart: Chart):
        self.chart = chart

    def sample(self, rng, n):
        pts = self.chart.sample(rng, n)
        for pt in pts:
            for name in self.chart.names:
                pt[f"p_{name}"] = float(rng.uniform(-2.0, 2.0))
        return pts


@dataclass
class RankReport:
    rank: int
    expected: int
    witness: dict[str, float] | None
    singular_values: list[float] = field(default_factory=list)
    samples: int = 0
    caveat: str = "independence certified only at sampled cotangent points"

    @property
    def full(self) -> bool:
        return self.rank == self.expected

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "expected": self.expected,
            "witness": self.witness,
            "singular_values": self.singular_values,
            "samples": self.samples,
            "caveat": self.caveat,
        }


def _numeric_rank(M: np.ndarray, rel: float = 1e-8) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > rel * s[0])), s


def independence_rank(symbols: Sequence[CotangentPoly], samples: int = 32, seed: int = 0) -> RankReport:
    """Max numeric rank of the (x, p)-Jacobian of the symbols over sampled points."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not symbols:
        return RankReport(0, 0, None)
    chart = same_chart(*(s.chart for s in symbols))
    rng = np.random.default_rng(seed)
    ps = momenta(chart)
    vars_ = tuple(chart.symbols) + ps
    exprs = sp.Matrix([instantiate(s.expr, rng) for s in symbols])
    jac = sp.lambdify(vars_, exprs.jacobian(vars_), "numpy")
    best, witness, best_s = -1, None, np.array([])
    dom = _CotangentDomain(chart)
    used = 0
    for pt in dom.sample(rng, samples):
        args = [pt[n] for n in chart.names] + [pt[f"p_{n}"] for n in chart.names]
        try:
            J = np.array(jac(*args), dtype=float).reshape(len(symbols), len(vars_))
        except (ZeroDivisionError, ValueError):
            continue
        if not np.all(np.isfinite(J)):
            continue
        used += 1
        k, s = _numeric_rank(J)
        if k > best:
            best, witness, best_s = k, pt, s
        if best == len(symbols):
            break
    return RankReport(max(best, 0), len(symbols), witness, [float(v) for v in best_s], used)


def fiber_independence(symbols: Sequence[CotangentPoly], x) -> int:
    """Rank of the symbols restricted to T*_x M, as polynomials in p (coefficient vectors)."""
    chart = same_chart(*(s.chart for s in symbols))
    ps = momenta(chart)
    subs = dict(zip(chart.symbols, chart.point(x).values()))
    polys = [sp.Poly(sp.expand(s.expr.subs(subs)), *ps) for s in symbols]
    monos = sorted({m for P in polys for m in P.monoms()})
    M = np.array([[float(P.coeff_monomial(m)) for m in monos] for P in polys], dtype=float)
    if M.size == 0:
        return 0
    return _numeric_rank(M)[0]


def _second_order_at(A: DiffOp, x) -> np.ndarray:
    if A.order > 2:
        raise OrderError(f"operator of order {A.order} has no diffusion matrix")
    a = A.second_order_matrix()
    if a.atoms(sp.core.function.AppliedUndef):
        a = instantiate(a, np.random.default_rng(0))
    subs = dict(zip(A.chart.symbols, A.chart.point(x).values()))
    return np.array(a.subs(subs).evalf(), dtype=float)


@dataclass
class Subspace:
    basis: np.ndarray
    dim: int


def span_at(A: DiffOp, x) -> Subspace:
    """Range of the order-2 coefficient matrix at x (the directions the noise moves)."""
    a = _second_order_at(A, x)
    w, v = np.linalg.eigh((a + a.T) / 2)
    top = max(np.max(np.abs(w)), 0.0) if w.size else 0.0
    keep = np.abs(w) > 1e-8 * top if top > 0 else np.zeros_like(w, dtype=bool)
    basis = v[:, keep].T
    return Subspace(basis, int(keep.sum()))


def ellipticity_check(ops: Sequence[DiffOp], weights: Sequence[float] | None, x, pivot_tol: float = 1e-12) -> bool:
    """Whether sum_i w_i a_i(x) is positive definite (Cholesky pivots above ``pivot_tol``)."""
    if weights is None:
        weights = [1.0] * len(ops)
    if len(weights) != len(ops):
        raise ValueError("one weight per operator")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    chart = same_chart(*(A.chart for A in ops))
    total = np.zeros((chart.dim, chart.dim))
    for A, w in zip(ops, weights):
        m = _second_order_at(A, x)
        if m.shape != total.shape:
            raise ValueError("dimension mismatch")
        total += w * m
    try:
        L = np.linalg.cholesky(total)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(L) ** 2 > pivot_tol))


def laplace_beltrami(g: sp.Matrix, chart: Chart) -> DiffOp:
    """Delta_g u = |g|^(-1/2) d_j (|g|^(1/2) g^{jk} d_k u)."""
    ginv = simplify_matrix(g.inv())
    vol = sp.sqrt(simplify(g.det()))
    syms = chart.symbols
    n = chart.dim
    coeffs = {}
    for j in range(n):
        for k in range(n):
            alpha = [0] * n
            alpha[j] += 1
            alpha[k] += 1
            coeffs[tuple(alpha)] = coeffs.get(tuple(alpha), 0) + ginv[j, k]
    for k in range(n):
        first = sum((sp.diff(vol * ginv[j, k], syms[j]) for j in range(n)), sp.S.Zero) / vol
        alpha = tuple(1 if i == k else 0 for i in range(n))
        coeffs[alpha] = coeffs.get(alpha, 0) + first
    return DiffOp(chart, coeffs)


def simplify_matrix(M: sp.Matrix) -> sp.Matrix:
    return M.applyfunc(simplify)


def metric_from_elliptic(A: DiffOp, samples: int = 16, seed: int = 0) -> tuple[sp.Matrix, VectorField]:
    """Metric g = (2a)^(-1) and drift V with A = (1/2) Delta_g + V.

    Requires the order-2 matrix a to be invertible and positive definite at
    sampled points of the chart.
    """
    if A.order != 2:
        raise OrderError("metric extraction needs an order-2 operator")
    if A.zeroth_order() != 0:
        raise ValueError("operator has a zeroth-order term")
    a = A.second_order_matrix()
    rng = np.random.default_rng(seed)
    for pt in A.chart.sample(rng, samples):
        try:
            ok = ellipticity_check([A], [1.0], pt)
        except (TypeError, ValueError):
            continue  # coefficients not numeric here (symbolic functions, poles)
        if not ok:
            raise NotElliptic(f"order-2 part is not positive definite at {pt}")
    if simplify(a.det()) == 0:
        raise NotElliptic("order-2 coefficient matrix is singular")
    g = simplify_matrix((2 * a).inv())
    LB = laplace_beltrami(g, A.chart)
    V = (A - sp.Rational(1, 2) * LB).first_order_field()
    return g, V
