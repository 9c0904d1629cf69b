"""Scalar expressions on chart coordinates.

Expressions are plain :mod:`sympy` expressions whose free symbols are chart
coordinates.  This module fixes the operations the rest of the package relies
on: a canonical ``simplify``, exact differentiation, IEEE evaluation with
domain checks, zero testing with honest verdicts, and a textual rendering
that the DSL parser reads back.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.printing.precedence import PRECEDENCE
from sympy.printing.str import StrPrinter

ScalarExpr = sp.Expr

ZERO_TOL = 1e-9
DEFAULT_SAMPLES = 64


class ExprError(ValueError):
    pass


class UnknownCoordinate(ExprError):
    pass


class UnboundCoordinate(ExprError):
    pass


class DomainError(ExprError):
    """Evaluation left the domain of an elementary function."""


class EmptyDomain(ExprError):
    pass


def as_expr(value) -> sp.Expr:
    """Coerce ints, fractions, strings of numbers and sympy objects to an expression.

    Python floats become sympy Floats; use ``sp.Rational`` for exact constants.
    """
    if isinstance(value, sp.Basic):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not scalar expressions")
    if isinstance(value, int):
        return sp.Integer(value)
    return sp.sympify(value)


def has_float(e: sp.Expr) -> bool:
    """True when ``e`` carries inexact (float) constants."""
    return any(isinstance(a, sp.Float) for a in sp.preorder_traversal(e))


def coordinate_symbols(e: sp.Expr) -> set[sp.Symbol]:
    return {s for s in e.free_symbols if isinstance(s, sp.Symbol)}


def undefined_functions(e: sp.Expr) -> set:
    return {a.func for a in e.atoms(AppliedUndef)}


# --------------------------------------------------------------------------
# canonical form


def _pythagorean(e: sp.Expr, force: bool = False) -> sp.Expr:
    # sin^k(u) -> sin^(k mod 2)(u) * (1 - cos^2(u))^(k div 2), only where cos(u)
    # also occurs (unless forced): elsewhere it gains nothing and loses accuracy
    cos_args = {c.args[0] for c in e.atoms(sp.cos)}

    def is_sin_power(a):
        return (
            a.is_Pow
            and isinstance(a.base, sp.sin)
            and a.exp.is_Integer
            and abs(a.exp) >= 2
            and (force or a.base.args[0] in cos_args)
        )

    def rewrite(a):
        u = a.base.args[0]
        k = int(a.exp)
        sign = 1 if k > 0 else -1
        k = abs(k)
        return (sp.sin(u) ** (k % 2) * (1 - sp.cos(u) ** 2) ** (k // 2)) ** sign

    return e.replace(is_sin_power, rewrite)


def _protect_constants(e: sp.Expr) -> tuple[sp.Expr, dict]:
    # integer powers of constant sums, e.g. (1 + sin(2/3)^2)^-1, are kept whole:
    # expanding and cancelling them builds huge, badly conditioned rationals
    found = {}

    def is_const_power(a):
        return a.is_Pow and a.exp.is_Integer and a.base.is_Add and not a.base.free_symbols and not a.base.is_Number

    def hide(a):
        d = found.get(a)
        if d is None:
            d = found[a] = sp.Dummy("c")
        return d

    return e.replace(is_const_power, hide), {d: a for a, d in found.items()}


def _clear_sin_denominator(e: sp.Expr) -> sp.Expr:
    # (cos^2 u - 1)/sin u: multiply through by sin u and keep the result
    # only if a factor of the new denominator 1 - cos^2 u cancels
    num, den = sp.fraction(e)
    for s in sorted(den.atoms(sp.sin), key=sp.default_sort_key):
        c = sp.cos(s.args[0])
        new_den = sp.expand(_pythagorean(den * s, force=True))
        cand = sp.cancel(sp.expand(_pythagorean(num * s, force=True)) / new_den)
        try:
            if sp.degree(sp.fraction(cand)[1], c) < sp.degree(new_den, c):
                return cand
        except sp.PolynomialError:
            continue  # cos u also occurs inside a transcendental argument
    return e


def _has_denominator(e: sp.Expr) -> bool:
    return any(a.exp.is_negative for a in e.atoms(sp.Pow)) or any(
        not (a.is_Integer) for a in e.atoms(sp.Rational)
    )


def _canonical_once(e: sp.Expr) -> sp.Expr:
    if e.has(sp.sin):
        e = _pythagorean(e)
    if not e.free_symbols:
        full = sp.expand(e)
        if full.is_Number:
            return full
    e, hidden = _protect_constants(e)
    e = sp.expand(e)
    if e.is_Number:
        return e
    if not _has_denominator(e):
        return e.xreplace(hidden) if hidden else e
    e = sp.cancel(e)
    if e.has(sp.sin):
        e = _clear_sin_denominator(e)
    return e.xreplace(hidden) if hidden else e


_CANONICAL: dict[sp.Expr, sp.Expr] = {}
_CACHE_LIMIT = 50_000


def canonical_form(e) -> sp.Expr:
    """Uncached canonical form (see :func:`simplify`)."""
    e = as_expr(e)
    for _ in range(4):
        nxt = _canonical_once(e)
        if nxt == e:
            return nxt
        e = nxt
    return e


def simplify(e) -> sp.Expr:
    """Canonical form: expanded, collected, single fraction, sin^2 rewritten.

    Iterated to a fixed point so that ``simplify`` is idempotent.  Results are
    memoized, and each result is recorded as its own canonical form.
    """
    e = as_expr(e)
    hit = _CANONICAL.get(e)
    if hit is not None:
        return hit
    out = canonical_form(e)
    if len(_CANONICAL) > _CACHE_LIMIT:
        _CANONICAL.clear()
    _CANONICAL[e] = out
    _CANONICAL.setdefault(out, out)
    return out


def differentiate(e, coord: sp.Symbol | str, coords: Sequence[sp.Symbol] | None = None) -> sp.Expr:
    """Exact partial derivative of ``e`` with respect to ``coord``, simplified.

    ``coord`` may be a name; it is then resolved against ``coords`` (a chart's
    symbols) or, failing that, against the free symbols of ``e``.
    """
    e = as_expr(e)
    sym = resolve_coordinate(coord, coords if coords is not None else sorted(e.free_symbols, key=str))
    if coords is not None and sym not in coords:
        raise UnknownCoordinate(f"unknown coordinate {coord!r}")
    return simplify(sp.diff(e, sym))


def resolve_coordinate(coord, coords: Iterable[sp.Symbol]) -> sp.Symbol:
    if isinstance(coord, sp.Symbol):
        return coord
    for s in coords:
        if s.name == coord:
            return s
    raise UnknownCoordinate(f"unknown coordinate {coord!r}")


# --------------------------------------------------------------------------
# evaluation


def _point_key(point: Mapping) -> dict[str, float]:
    out = {}
    for k, v in point.items():
        out[k.name if isinstance(k, sp.Symbol) else str(k)] = float(v)
    return out


@lru_cache(maxsize=4096)
def _compiled(e: sp.Expr, funcs: tuple) -> tuple[Callable, tuple[str, ...]]:
    syms = sorted(e.free_symbols, key=lambda s: s.name)
    module = {name: fn for name, fn in funcs}
    return sp.lambdify(syms, e, modules=[module, "math"]), tuple(s.name for s in syms)


def evaluate(e, point: Mapping, functions: Mapping[str, Callable] | None = None) -> float:
    """Evaluate ``e`` at ``point`` (coordinate -> value) in double precision.

    Raises :class:`UnboundCoordinate` for a free coordinate missing from the
    point and :class:`DomainError` for sqrt of a negative, division by zero
    and similar.
    """
    e = as_expr(e)
    values = _point_key(point)
    funcs = tuple(sorted((functions or {}).items()))
    for fn in undefined_functions(e):
        if str(fn) not in (functions or {}):
            raise UnboundCoordinate(f"function {fn} has no numeric binding")
    if e.has(sp.Derivative, sp.Subs):
        raise ExprError("derivatives of undefined functions need concrete bindings; use instantiate()")
    fn, names = _compiled(e, funcs)
    missing = [n for n in names if n not in values]
    if missing:
        raise UnboundCoordinate(f"unbound coordinate(s): {', '.join(missing)}")
    try:
        val = fn(*(values[n] for n in names))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise DomainError(f"domain violation evaluating {render(e)} at {values}: {exc}") from exc
    if isinstance(val, complex):
        if abs(val.imag) > 0:
            raise DomainError(f"complex value evaluating {render(e)} at {values}")
        val = val.real
    val = float(val)
    if not math.isfinite(val):
        raise DomainError(f"non-finite value evaluating {render(e)} at {values}")
    return val


def instantiate(e: sp.Expr, rng: np.random.Generator) -> sp.Expr:
    """Replace undefined functions by random smooth concrete functions.

    Used by numeric zero tests on expressions like ``f(r)`` whose claims must
    hold for every ``f``.  Derivatives of the replaced functions are evaluated.
    """
    funcs = undefined_functions(e)
    if not funcs:
        return e
    u = sp.Dummy("u")
    for fn in sorted(funcs, key=str):
        c0, c1, c2 = (sp.Float(v) for v in rng.uniform(0.5, 1.5, size=3))
        e = e.replace(fn, sp.Lambda(u, c0 + c1 * sp.sin(u) + c2 * u**2 / 4))
    return e.doit()


# --------------------------------------------------------------------------
# zero testing


class ZeroStatus(enum.Enum):
    SYMBOLIC_ZERO = "SymbolicZero"
    NUMERIC_ZERO = "NumericZero"
    NONZERO = "NonZero"


@dataclass(frozen=True)
class ZeroVerdict:
    status: ZeroStatus
    witness: dict[str, float] | None = None
    residual: float | None = None
    max_residual: float = 0.0
    samples: int = 0
    label: str | None = None

    @property
    def is_zero(self) -> bool:
        return self.status is not ZeroStatus.NONZERO

    @property
    def symbolic(self) -> bool:
        return self.status is ZeroStatus.SYMBOLIC_ZERO

    def labelled(self, label: str) -> "ZeroVerdict":
        return ZeroVerdict(self.status, self.witness, self.residual, self.max_residual, self.samples, label)

    def to_dict(self) -> dict:
        out = {"status": self.status.value, "max_residual": self.max_residual, "samples": self.samples}
        if self.label is not None:
            out["label"] = self.label
        if self.witness is not None:
            out["witness"] = dict(self.witness)
            out["residual"] = self.residual
        return out

    @classmethod
    def combine(cls, verdicts: Iterable["ZeroVerdict"]) -> "ZeroVerdict":
        """Conjunction: the first NonZero wins, else NumericZero if any, else SymbolicZero."""
        verdicts = list(verdicts)
        for v in verdicts:
            if v.status is ZeroStatus.NONZERO:
                return v
        numeric = [v for v in verdicts if v.status is ZeroStatus.NUMERIC_ZERO]
        if numeric:
            return ZeroVerdict(
                ZeroStatus.NUMERIC_ZERO,
                max_residual=max(v.max_residual for v in numeric),
                samples=sum(v.samples for v in numeric),
                label=None,
            )
        return ZeroVerdict(ZeroStatus.SYMBOLIC_ZERO)

    def __str__(self) -> str:
        s = self.status.value
        if self.label:
            s += f" [{self.label}]"
        if self.witness is not None:
            s += f" witness={self.witness} residual={self.residual:.3g}"
        return s


SYMBOLIC_ZERO = ZeroVerdict(ZeroStatus.SYMBOLIC_ZERO)


def default_box(sym: sp.Symbol) -> tuple[float, float]:
    if sym.is_positive or sym.is_nonnegative:
        return (0.1, 3.0)
    return (-2.0, 2.0)


def _sample_points(domain, syms: Sequence[sp.Symbol], n: int, rng: np.random.Generator) -> list[dict[sp.Symbol, float]]:
    if domain is not None and hasattr(domain, "sample"):
        pts = domain.sample(rng, n)
        by_name = {s.name: s for s in syms}
        out = []
        for p in pts:
            q = {}
            for k, v in p.items():
                name = k.name if isinstance(k, sp.Symbol) else k
                if name in by_name:
                    q[by_name[name]] = v
            for s in syms:
                if s not in q:
                    lo, hi = default_box(s)
                    q[s] = float(rng.uniform(lo, hi))
            out.append(q)
        return out
    boxes = {}
    for s in syms:
        lo, hi = default_box(s)
        if not lo < hi:
            raise EmptyDomain(f"empty sampling box for {s}")
        boxes[s] = (lo, hi)
    return [{s: float(rng.uniform(*boxes[s])) for s in syms} for _ in range(n)]


def _terms(e: sp.Expr) -> tuple[sp.Expr, ...]:
    if e.is_Add:
        return e.args
    n, d = e.as_numer_denom()
    if n.is_Add and d != 1:
        return tuple(a / d for a in n.args)
    return (e,)


def is_zero(
    e,
    domain=None,
    samples: int = DEFAULT_SAMPLES,
    rng: np.random.Generator | int | None = None,
    tol: float = ZERO_TOL,
) -> ZeroVerdict:
    """Decide whether ``e`` vanishes identically on ``domain``.

    SymbolicZero when the canonical form is 0.  Otherwise ``e`` is evaluated
    at ``samples`` points of the domain's sampling box; points where it is
    undefined are skipped.  NumericZero needs every residual within
    ``tol * (1 + scale)``, scale being the largest term magnitude.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    e = simplify(e)
    if e == 0:
        return SYMBOLIC_ZERO
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(0 if rng is None else rng)
    concrete = instantiate(e, rng)
    syms = sorted(coordinate_symbols(concrete), key=lambda s: s.name)
    if not syms:
        val = float(sp.N(concrete))
        if abs(val) <= tol:
            return ZeroVerdict(ZeroStatus.NUMERIC_ZERO, max_residual=abs(val), samples=1)
        return ZeroVerdict(ZeroStatus.NONZERO, witness={}, residual=val, samples=1)
    terms = _terms(sp.expand(concrete)) if concrete.is_Add else _terms(concrete)
    total = sp.lambdify(syms, concrete, modules="math")
    term_fns = [sp.lambdify(syms, t, modules="math") for t in terms]
    used = 0
    worst = 0.0
    attempts = 0
    budget = 20 * samples
    while used < samples:
        pts = _sample_points(domain, syms, samples - used, rng)
        for p in pts:
            attempts += 1
            args = [p[s] for s in syms]
            try:
                val = complex(total(*args))
                scale = max(abs(complex(t(*args))) for t in term_fns)
            except (ZeroDivisionError, ValueError, OverflowError):
                continue
            if not (cmath.isfinite(val) and math.isfinite(scale)) or abs(val.imag) > tol * (1 + scale):
                continue
            used += 1
            resid = abs(val.real)
            if resid > tol * (1 + scale):
                return ZeroVerdict(
                    ZeroStatus.NONZERO,
                    witness={s.name: p[s] for s in syms},
                    residual=val.real,
                    samples=used,
                )
            worst = max(worst, resid)
        if attempts >= budget and used < samples:
            if used == 0:
                raise EmptyDomain("no feasible sample point found for zero test")
            break
    return ZeroVerdict(ZeroStatus.NUMERIC_ZERO, max_residual=worst, samples=used)


def find_nonzero(e, points: Iterable[Mapping]) -> ZeroVerdict | None:
    """NonZero verdict at the first listed point where ``e`` is visibly nonzero."""
    e = simplify(e)
    for p in points:
        try:
            v = evaluate(e, p)
        except ExprError:
            continue
        if abs(v) > ZERO_TOL:
            return ZeroVerdict(ZeroStatus.NONZERO, witness=_point_key(p), residual=v, samples=1)
    return None


# --------------------------------------------------------------------------
# rendering


class _Printer(StrPrinter):
    """Infix rendering with ``^`` powers, readable by :func:`sdskit.dsl.parse_expression`."""

    def _print_Pow(self, expr, rational=False):
        base, exp = expr.as_base_exp()
        if exp is sp.S.Half:
            return f"sqrt({self._print(base)})"
        if exp.is_Rational and exp.is_negative:
            if exp == -1:
                return f"1/{self.parenthesize(base, PRECEDENCE['Pow'], strict=False)}"
            if exp == -sp.S.Half:
                return f"1/sqrt({self._print(base)})"
            return f"1/{self._print(sp.Pow(base, -exp, evaluate=False))}"
        b = self.parenthesize(base, PRECEDENCE["Pow"], strict=True)
        if exp.is_Integer and exp.is_positive:
            return f"{b}^{exp}"
        return f"{b}^({self._print(exp)})"

    def _print_Exp1(self, expr):
        return "exp(1)"

    def _print_Float(self, expr):
        return repr(float(expr))


_PRINTER = _Printer({"order": "lex"})


def render(e) -> str:
    """Canonical text of ``e``: infix, ``^`` for powers, function-call syntax."""
    return _PRINTER.doprint(as_expr(e))


def parse(text: str, coords: Iterable[sp.Symbol] = (), functions: Iterable[str] = ()) -> sp.Expr:
    """Parse rendered text back into an expression over ``coords``."""
    from .dsl import parse_expression

    return parse_expression(text, coords, functions)
