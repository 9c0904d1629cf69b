"""Linear differential operators with symbolic coefficients.

A :class:`DiffOp` maps multi-indices over the chart coordinates to
coefficients, so compositions and commutators of any order stay exact.  The
Stratonovich bookkeeping of an SDS generator lives in :func:`generator`.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import ZeroVerdict, as_expr, is_zero, render, simplify
from .geometry import SDS, Chart, ScalarField, VectorField, apply_field, same_chart

MultiIndex = tuple[int, ...]


def _add_index(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(i + j for i, j in zip(a, b))


def _sub_indices(alpha: MultiIndex):
    """All gamma <= alpha componentwise, with the product binomial C(alpha, gamma)."""
    for gamma in np.ndindex(*[a + 1 for a in alpha]) if alpha else [()]:
        c = 1
        for a, g in zip(alpha, gamma):
            c *= comb(a, g)
        yield tuple(int(g) for g in gamma), c


def _derivative(e: sp.Expr, syms: Sequence[sp.Symbol], alpha: MultiIndex) -> sp.Expr:
    for s, k in zip(syms, alpha):
        if k:
            e = sp.diff(e, s, k)
    return e


def monomial_label(chart: Chart, alpha: MultiIndex) -> str:
    parts = []
    for n, k in zip(chart.names, alpha):
        if k == 1:
            parts.append(f"d/d{n}")
        elif k > 1:
            parts.append("*".join([f"d/d{n}"] * k))
    return "*".join(parts) if parts else "1"


class DiffOp:
    """sum_alpha c_alpha(x) d^alpha on a chart; zero coefficients are dropped."""

    __slots__ = ("chart", "_coeffs", "_hash")

    def __init__(self, chart: Chart, coeffs: Mapping[MultiIndex, sp.Expr] | None = None, *, simplified: bool = False):
        self.chart = chart
        out = {}
        for alpha, c in (coeffs or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != chart.dim or any(a < 0 for a in alpha):
                raise ValueError(f"bad multi-index {alpha} for chart {chart.name}")
            c = as_expr(c)
            if not simplified:
                c = simplify(chart.check_expr(c))
            if c != 0:
                out[alpha] = c
        self._coeffs = out
        self._hash = None

    # construction ----------------------------------------------------------

    @classmethod
    def zero(cls, chart: Chart) -> "DiffOp":
        return cls(chart)

    @classmethod
    def multiplication(cls, chart: Chart, F) -> "DiffOp":
        if isinstance(F, ScalarField):
            same_chart(chart, F.chart)
            F = F.value
        return cls(chart, {(0,) * chart.dim: F})

    @classmethod
    def identity(cls, chart: Chart) -> "DiffOp":
        return cls.multiplication(chart, 1)

    @classmethod
    def from_field(cls, V: VectorField) -> "DiffOp":
        n = V.chart.dim
        coeffs = {}
        for j, c in enumerate(V.components):
            alpha = tuple(1 if i == j else 0 for i in range(n))
            coeffs[alpha] = c
        return cls(V.chart, coeffs, simplified=True)

    @classmethod
    def partial(cls, chart: Chart, *names: str, coef=1) -> "DiffOp":
        alpha = [0] * chart.dim
        for n in names:
            alpha[chart.index(n)] += 1
        return cls(chart, {tuple(alpha): coef})

    # access ----------------------------------------------------------------

    @property
    def coeffs(self) -> dict[MultiIndex, sp.Expr]:
        return dict(self._coeffs)

    def items(self):
        return sorted(self._coeffs.items(), key=lambda kv: (-sum(kv[0]), tuple(-a for a in kv[0])))

    def coeff(self, alpha: MultiIndex | str | Sequence[str]) -> sp.Expr:
        if isinstance(alpha, str):
            alpha = [alpha] if alpha else []
        if alpha and isinstance(next(iter(alpha)), str):
            idx = [0] * self.chart.dim
            for n in alpha:
                idx[self.chart.index(n)] += 1
            alpha = tuple(idx)
        return self._coeffs.get(tuple(alpha), sp.S.Zero)

    @property
    def order(self) -> int:
        return max((sum(a) for a in self._coeffs), default=0)

    def is_zero_operator(self) -> bool:
        return not self._coeffs

    def part(self, order: int) -> "DiffOp":
        return DiffOp(self.chart, {a: c for a, c in self._coeffs.items() if sum(a) == order}, simplified=True)

    def zeroth_order(self) -> sp.Expr:
        return self._coeffs.get((0,) * self.chart.dim, sp.S.Zero)

    def first_order_field(self) -> VectorField:
        n = self.chart.dim
        return VectorField(
            self.chart,
            tuple(self._coeffs.get(tuple(1 if i == j else 0 for i in range(n)), 0) for j in range(n)),
        )

    def second_order_matrix(self) -> sp.Matrix:
        """Symmetric a with top part sum_jk a^{jk} d_j d_k (off-diagonals halved)."""
        n = self.chart.dim
        a = sp.zeros(n, n)
        for alpha, c in self._coeffs.items():
            if sum(alpha) != 2:
                continue
            idx = [i for i, k in enumerate(alpha) for _ in range(k)]
            j, k = idx
            if j == k:
                a[j, j] = c
            else:
                a[j, k] = a[k, j] = c / 2
        return a

    # algebra ---------------------------------------------------------------

    def _combine(self, other: "DiffOp", sign: int) -> "DiffOp":
        same_chart(self.chart, other.chart)
        out = dict(self._coeffs)
        for a, c in other._coeffs.items():
            out[a] = out.get(a, 0) + sign * c
        return DiffOp(self.chart, out)

    def __add__(self, other: "DiffOp") -> "DiffOp":
        return self._combine(other, 1)

    def __sub__(self, other: "DiffOp") -> "DiffOp":
        return self._combine(other, -1)

    def __neg__(self) -> "DiffOp":
        return DiffOp(self.chart, {a: -c for a, c in self._coeffs.items()}, simplified=True)

    def __rmul__(self, coef) -> "DiffOp":
        """Left multiplication by a function: (F A)(u) = F * A(u)."""
        coef = as_expr(coef)
        return DiffOp(self.chart, {a: coef * c for a, c in self._coeffs.items()})

    def __matmul__(self, other: "DiffOp") -> "DiffOp":
        return compose(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self.chart == other.chart and self._coeffs == other._coeffs

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.chart, frozenset(self._coeffs.items())))
        return self._hash

    def subs(self, mapping) -> "DiffOp":
        return DiffOp(self.chart, {a: c.subs(mapping) for a, c in self._coeffs.items()})

    def apply(self, F) -> sp.Expr:
        """A(F), simplified."""
        if isinstance(F, ScalarField):
            same_chart(self.chart, F.chart)
            F = F.value
        F = as_expr(F)
        syms = self.chart.symbols
        return simplify(sum((c * _derivative(F, syms, a) for a, c in self._coeffs.items()), sp.S.Zero))

    def __call__(self, F) -> sp.Expr:
        return self.apply(F)

    def __repr__(self) -> str:
        return f"DiffOp({self.chart.name}: {self})"

    def __str__(self) -> str:
        terms = []
        for alpha, c in self.items():
            label = monomial_label(self.chart, alpha)
            terms.append(f"({render(c)})" if label == "1" else f"({render(c)})*{label}")
        return " + ".join(terms) if terms else "0"


def as_operator(obj, chart: Chart | None = None) -> DiffOp:
    """Promote a field (order 1), scalar field (order 0) or operator to a DiffOp."""
    if isinstance(obj, DiffOp):
        return obj
    if isinstance(obj, VectorField):
        return DiffOp.from_field(obj)
    if isinstance(obj, ScalarField):
        return DiffOp.multiplication(obj.chart, obj.value)
    if chart is None:
        raise TypeError(f"cannot turn {obj!r} into an operator without a chart")
    return DiffOp.multiplication(chart, obj)


def compose(A: DiffOp, B: DiffOp) -> DiffOp:
    """Operator product A o B by the generalized Leibniz rule."""
    chart = same_chart(A.chart, B.chart)
    syms = chart.symbols
    out: dict[MultiIndex, sp.Expr] = {}
    for alpha, a in A._coeffs.items():
        for beta, b in B._coeffs.items():
            for gamma, c in _sub_indices(alpha):
                rest = tuple(x - y for x, y in zip(alpha, gamma))
                db = _derivative(b, syms, rest)
                if db == 0:
                    continue
                key = _add_index(gamma, beta)
                out[key] = out.get(key, 0) + c * a * db
    return DiffOp(chart, out)


def commutator(A: DiffOp, B: DiffOp) -> DiffOp:
    return compose(A, B) - compose(B, A)


def generator(X: SDS) -> DiffOp:
    """Diffusion generator X0 + 1/2 sum_i X_i o X_i (operator squares)."""
    A = DiffOp.from_field(X.drift)
    half = sp.Rational(1, 2)
    for V in X.noise:
        Vop = DiffOp.from_field(V)
        A = A + half * compose(Vop, Vop)
    return A


def operator_verdict(A: DiffOp, samples: int = 64, seed: int = 0) -> ZeroVerdict:
    """Zero test of every coefficient of A, labelled by its derivative monomial."""
    verdicts = [
        is_zero(c, A.chart, samples, seed).labelled(monomial_label(A.chart, alpha)) for alpha, c in A.items()
    ]
    return ZeroVerdict.combine(verdicts)


def diffusion_equivalent(X: SDS, Y: SDS, samples: int = 64) -> ZeroVerdict:
    same_chart(X.chart, Y.chart)
    return operator_verdict(generator(X) - generator(Y), samples)


def strong_first_integral(X: SDS, F, mode: str = "by-fields", samples: int = 64) -> ZeroVerdict:
    """Is F annihilated by every field of X?

    ``by-fields`` tests X_i(F) = 0 for i = 0..k; ``by-commutator`` tests the
    coefficients of [A_X, F] with F a multiplication operator.
    """
    if isinstance(F, ScalarField):
        same_chart(X.chart, F.chart)
        F = F.value
    F = X.chart.check_expr(as_expr(F))
    if mode == "by-fields":
        return ZeroVerdict.combine(
            is_zero(apply_field(V, F), X.chart, samples).labelled(f"X{i}(F)") for i, V in enumerate(X.fields)
        )
    if mode == "by-commutator":
        return operator_verdict(commutator(generator(X), DiffOp.multiplication(X.chart, F)), samples)
    raise ValueError(f"unknown mode {mode!r}; use 'by-fields' or 'by-commutator'")


def weak_first_integral(X: SDS, F, samples: int = 64) -> ZeroVerdict:
    if isinstance(F, ScalarField):
        same_chart(X.chart, F.chart)
        F = F.value
    return is_zero(generator(X).apply(X.chart.check_expr(as_expr(F))), X.chart, samples).labelled("A_X(F)")


# --------------------------------------------------------------------------
# invariant level sets


class LevelSetNotFound(RuntimeError):
    pass


@dataclass
class LevelSetReport:
    passed: bool
    points: list[dict[str, float]]
    max_pairing: float
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {
            "status": "PASS" if self.passed else "FAIL",
            "points": self.points,
            "max_pairing": self.max_pairing,
            "witness": self.witness,
        }


def _newton_to_level(fn, jac, x0: np.ndarray, target: np.ndarray, iters: int = 60) -> np.ndarray | None:
    x = x0.copy()
    for _ in range(iters):
        r = np.ravel(np.asarray(fn(*x), dtype=float)) - target
        if not np.all(np.isfinite(r)):
            return None
        if np.max(np.abs(r)) < 1e-12:
            return x
        J = np.array(jac(*x), dtype=float).reshape(len(r), len(x))
        x = x - np.linalg.pinv(J) @ r
    r = np.ravel(np.asarray(fn(*x), dtype=float)) - target
    return x if np.max(np.abs(r)) < 1e-10 else None


def invariant_level_set(
    X: SDS,
    integrals: Sequence,
    values: Sequence[float],
    samples: int = 16,
    seed: int = 0,
    tol: float = 1e-8,
    retries: int = 200,
) -> LevelSetReport:
    """Check tangency of every field of X to {F_j = c_j} at located points."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    chart = X.chart
    Fs = [f.value if isinstance(f, ScalarField) else chart.check_expr(as_expr(f)) for f in integrals]
    syms = chart.symbols
    Fm = sp.Matrix(Fs)
    fn = sp.lambdify(syms, Fm, "numpy")
    jac = sp.lambdify(syms, Fm.jacobian(syms), "numpy")
    target = np.asarray(values, dtype=float)
    # pairings <dF_j, X_i>
    pair_exprs = [[apply_field(V, F) for F in Fs] for V in X.fields]
    pair_fns = [[sp.lambdify(syms, e, "math") for e in row] for row in pair_exprs]
    rng = np.random.default_rng(seed)
    points: list[dict[str, float]] = []
    tries = 0
    worst = 0.0
    while len(points) < samples:
        if tries >= retries:
            if not points:
                raise LevelSetNotFound("no point of the level set found")
            break
        tries += 1
        x0 = np.array([rng.uniform(*c.box()) for c in chart.coords])
        x = _newton_to_level(fn, jac, x0, target)
        if x is None:
            continue
        p = dict(zip(chart.names, map(float, x)))
        points.append(p)
        for i, row in enumerate(pair_fns):
            for j, g in enumerate(row):
                val = float(g(*x))
                worst = max(worst, abs(val))
                if abs(val) > tol:
                    return LevelSetReport(
                        False, points, worst, {"point": p, "field": f"X{i}", "integral": j, "pairing": val}
                    )
    return LevelSetReport(True, points, worst)
