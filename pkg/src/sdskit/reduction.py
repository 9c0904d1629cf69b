"""Symmetry reduction of SDS: invariance, projection of generators, realization.

A generator is pushed through a map Phi with the carre du champ

    b^j = A(Phi^j),   G^{jk} = A(Phi^j Phi^k) - Phi^j A(Phi^k) - Phi^k A(Phi^j),

giving the candidate b^j d_j + 1/2 G^{jk} d_j d_k on the target.  The
candidate exists exactly when every b^j and G^{jk} is constant on the
fibres of Phi; it is either rewritten symbolically in target coordinates or
rejected with a pair of fibre points where a coefficient differs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import (
    ZeroStatus,
    ZeroVerdict,
    as_expr,
    instantiate,
    is_zero,
    render,
    simplify,
)
from .geometry import (
    SDS,
    Chart,
    ChartMismatch,
    GroupAction,
    VectorField,
    apply_field,
    field_verdict,
    lie_bracket,
    same_chart,
)
from .operators import DiffOp, commutator, generator, monomial_label, operator_verdict
from .symbol import OrderError

FIBER_TOL = 1e-10
VALUE_RTOL = 1e-7


class NotProjectable(ValueError):
    """Raised when a generator is not constant along the fibres of a map."""

    def __init__(self, message: str, witness: dict):
        super().__init__(message)
        self.witness = witness


class NoSymbolicRewrite(ValueError):
    """Fibre-constant coefficients that could not be written in target coordinates."""


class FiberSamplingError(RuntimeError):
    pass


class IndefiniteMatrix(ValueError):
    pass


class NoSquareRoot(ValueError):
    pass


class InvarianceError(ValueError):
    pass


# --------------------------------------------------------------------------
# quotient maps


@dataclass(frozen=True)
class QuotientMap:
    """Map Phi from ``source`` to ``target`` given by target-coordinate expressions.

    ``section`` optionally gives a right inverse s (source coordinates as
    expressions in target coordinates, Phi o s = id); coefficients are then
    rewritten by composing with s.
    """

    source: Chart
    target: Chart
    components: tuple[sp.Expr, ...]
    section: tuple[sp.Expr, ...] | None = None
    name: str = "Phi"

    def __post_init__(self):
        comps = self.components
        if isinstance(comps, Mapping):
            missing = set(self.target.names) - set(comps)
            extra = set(comps) - set(self.target.names)
            if missing or extra:
                raise ChartMismatch(f"map components must cover exactly {list(self.target.names)}")
            comps = [comps[n] for n in self.target.names]
        comps = tuple(simplify(self.source.check_expr(as_expr(c))) for c in comps)
        object.__setattr__(self, "components", comps)
        sec = self.section
        if sec is not None:
            if isinstance(sec, Mapping):
                sec = [sec[n] for n in self.source.names]
            sec = tuple(self.target.check_expr(as_expr(c)) for c in sec)
            if len(sec) != self.source.dim:
                raise ValueError("section needs one expression per source coordinate")
            object.__setattr__(self, "section", sec)

    @classmethod
    def identity(cls, chart: Chart) -> "QuotientMap":
        return cls(chart, chart, chart.symbols, chart.symbols, name="id")

    def pullback(self, f) -> sp.Expr:
        """Phi* f = f o Phi for an expression in target coordinates."""
        f = self.target.check_expr(as_expr(f))
        return simplify(f.subs(dict(zip(self.target.symbols, self.components)), simultaneous=True))

    def jacobian(self) -> sp.Matrix:
        return sp.Matrix(self.components).jacobian(self.source.symbols)

    def submersion_report(self, samples: int = 16, seed: int = 0) -> dict:
        rng = np.random.default_rng(seed)
        J = sp.lambdify(self.source.symbols, self.jacobian(), "numpy")
        worst = self.target.dim
        witness = None
        for p in self.source.sample(rng, samples):
            try:
                M = np.array(J(*p.values()), dtype=float)
            except (ZeroDivisionError, ValueError):
                continue
            if not np.all(np.isfinite(M)):
                continue
            s = np.linalg.svd(M, compute_uv=False)
            k = int(np.sum(s > 1e-8 * max(s[0], 1e-300)))
            if k < worst:
                worst, witness = k, p
        return {"full_rank": worst == self.target.dim, "min_rank": worst, "witness": witness}


# --------------------------------------------------------------------------
# invariance


@dataclass
class InvarianceReport:
    mode: str
    verdicts: dict[str, ZeroVerdict]
    details: dict[str, str] = field(default_factory=dict)

    @property
    def verdict(self) -> ZeroVerdict:
        return ZeroVerdict.combine(self.verdicts.values())

    @property
    def passed(self) -> bool:
        return self.verdict.is_zero

    def failures(self) -> dict[str, ZeroVerdict]:
        return {k: v for k, v in self.verdicts.items() if not v.is_zero}

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "status": self.verdict.status.value,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "details": dict(self.details),
        }


def _names(prefix: str, n: int, given: Sequence[str] | None) -> list[str]:
    if given is not None:
        if len(given) != n:
            raise ValueError(f"expected {n} names, got {len(given)}")
        return list(given)
    return [f"{prefix}{i}" for i in range(n)]


def strict_invariance(
    X: SDS,
    G: GroupAction,
    samples: int = 64,
    field_names: Sequence[str] | None = None,
    generator_names: Sequence[str] | None = None,
) -> InvarianceReport:
    """[V, X_i] = 0 for every group generator V and every field X_i."""
    same_chart(X.chart, G.chart)
    fnames = _names("X", len(X.fields), field_names)
    gnames = _names("V", len(G.generators), generator_names)
    verdicts, details = {}, {}
    for gname, V in zip(gnames, G.generators):
        for fname, W in zip(fnames, X.fields):
            br = lie_bracket(V, W)
            key = f"[{gname},{fname}]"
            verdicts[key] = field_verdict(br, samples)
            details[key] = str(br)
    return InvarianceReport("strict", verdicts, details)


def diffusion_invariance(
    X: SDS, G: GroupAction, samples: int = 64, generator_names: Sequence[str] | None = None
) -> InvarianceReport:
    """[V, A_X] = 0 for every group generator V."""
    same_chart(X.chart, G.chart)
    A = generator(X)
    gnames = _names("V", len(G.generators), generator_names)
    verdicts, details = {}, {}
    for gname, V in zip(gnames, G.generators):
        C = commutator(DiffOp.from_field(V), A)
        key = f"[{gname},A]"
        verdicts[key] = operator_verdict(C, samples)
        details[key] = str(C)
    return InvarianceReport("diffusion", verdicts, details)


# --------------------------------------------------------------------------
# fibre sampling


class _Numeric:
    """Shared numeric versions of a batch of expressions (one concrete choice of
    every undefined function)."""

    def __init__(self, syms, exprs, rng):
        conc = instantiate(sp.Tuple(*exprs), rng) if exprs else sp.Tuple()
        self.fns = [sp.lambdify(syms, e, "math") for e in conc]

    def __call__(self, x) -> list[float] | None:
        out = []
        for fn in self.fns:
            try:
                v = complex(fn(*x))
            except (ZeroDivisionError, ValueError, OverflowError, TypeError):
                return None
            if not np.isfinite(v) or abs(v.imag) > 1e-12 * (1 + abs(v.real)):
                return None
            out.append(v.real)
        return out


class FiberSampler:
    """Pairs of distinct source points with equal image under Phi.

    Partners are found by moving off the base point (quarter-period or
    quarter-box shifts first, then random steps orthogonal to dPhi) and
    projecting back onto the fibre with Gauss-Newton.
    """

    def __init__(self, phi: QuotientMap, rng: np.random.Generator, budget: int = 200):
        self.phi = phi
        self.rng = rng
        self.budget = budget
        syms = phi.source.symbols
        self._f = sp.lambdify(syms, sp.Matrix(phi.components), "numpy")
        self._J = sp.lambdify(syms, phi.jacobian(), "numpy")
        self.boxes = [c.box() for c in phi.source.coords]

    def value(self, x) -> np.ndarray | None:
        try:
            v = np.ravel(np.asarray(self._f(*x), dtype=float))
        except (ZeroDivisionError, ValueError, TypeError):
            return None
        return v if np.all(np.isfinite(v)) else None

    def jac(self, x) -> np.ndarray | None:
        try:
            J = np.array(self._J(*x), dtype=float).reshape(self.phi.target.dim, self.phi.source.dim)
        except (ZeroDivisionError, ValueError, TypeError):
            return None
        return J if np.all(np.isfinite(J)) else None

    def in_domain(self, x) -> bool:
        if not all(c.contains(v) for c, v in zip(self.phi.source.coords, x)):
            return False
        v = self.value(x)
        return v is not None and all(c.contains(t) for c, t in zip(self.phi.target.coords, v))

    def project(self, y: np.ndarray, target: np.ndarray) -> np.ndarray | None:
        for _ in range(60):
            v = self.value(y)
            if v is None:
                return None
            r = v - target
            if np.max(np.abs(r)) <= 1e-13 * (1 + np.max(np.abs(target))):
                break
            J = self.jac(y)
            if J is None:
                return None
            y = y - np.linalg.pinv(J) @ r
        v = self.value(y)
        if v is None or np.max(np.abs(v - target)) > FIBER_TOL * (1 + np.max(np.abs(target))):
            return None
        return y

    def _shifts(self, x):
        for i, (c, (lo, hi)) in enumerate(zip(self.phi.source.coords, self.boxes)):
            d = np.zeros_like(x)
            d[i] = (hi - lo) / 4
            yield x + d

    def _walks(self, x):
        scale = np.array([(hi - lo) / 4 for lo, hi in self.boxes])
        for _ in range(self.budget):
            J = self.jac(x)
            if J is None:
                return
            d = self.rng.normal(size=x.size) * scale
            d = d - np.linalg.pinv(J) @ (J @ d)
            if np.linalg.norm(d) < 1e-12 * np.linalg.norm(scale):
                yield x.copy()  # zero-dimensional fibre
                return
            yield x + d

    def partner(self, x: np.ndarray, lattice: bool) -> np.ndarray | None:
        target = self.value(x)
        if target is None:
            return None
        cands = itertools.chain(self._shifts(x) if lattice else (), self._walks(x))
        for k, y in enumerate(cands):
            if k >= self.budget:
                break
            y = self.project(np.array(y, dtype=float), target)
            if y is not None and self.in_domain(y):
                return y
        return None

    def pairs(self, n: int):
        src = self.phi.source
        made = 0
        bases = src.sample(self.rng, 4 * n)
        for k, p in enumerate(bases):
            if made >= n:
                break
            x = np.array(list(p.values()), dtype=float)
            if not self.in_domain(x):
                continue
            y = self.partner(x, lattice=k < 4)
            if y is None:
                continue
            made += 1
            yield x, y
        if made == 0:
            raise FiberSamplingError(f"no pair of points with equal {self.phi.name}-value found")


@dataclass
class FiberReport:
    passed: bool
    pairs: int
    witness: dict | None = None
    max_difference: float = 0.0

    def to_dict(self) -> dict:
        return {
            "status": "PASS" if self.passed else "FAIL",
            "pairs": self.pairs,
            "max_difference": self.max_difference,
            "witness": self.witness,
        }


def fiber_constancy(
    phi: QuotientMap, exprs: Mapping[str, sp.Expr], samples: int = 32, seed: int = 0
) -> FiberReport:
    """Check that each expression takes equal values on sampled fibre pairs."""
    rng = np.random.default_rng(seed)
    labels = list(exprs)
    num = _Numeric(phi.source.symbols, [exprs[k] for k in labels], rng)
    sampler = FiberSampler(phi, rng)
    names = phi.source.names
    used, worst = 0, 0.0
    for x, y in sampler.pairs(samples):
        vx, vy = num(x), num(y)
        if vx is None or vy is None:
            continue
        used += 1
        for lab, a, b in zip(labels, vx, vy):
            diff = abs(a - b)
            worst = max(worst, diff)
            if diff > VALUE_RTOL * (1 + max(abs(a), abs(b))):
                wx = dict(zip(names, map(float, phi.source.wrap(x))))
                wy = dict(zip(names, map(float, phi.source.wrap(y))))
                return FiberReport(False, used, {"coefficient": lab, "x": wx, "y": wy, "values": [a, b]}, worst)
    if used == 0:
        raise FiberSamplingError("coefficients could not be evaluated on any fibre pair")
    return FiberReport(True, used, None, worst)


# --------------------------------------------------------------------------
# projection of generators


@dataclass
class CoefficientRecord:
    label: str
    source: sp.Expr
    target: sp.Expr | None
    method: str
    verdict: ZeroVerdict | None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "source": render(self.source),
            "target": None if self.target is None else render(self.target),
            "method": self.method,
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
        }


@dataclass
class ReductionReport:
    map_name: str
    reduced: DiffOp | None
    coefficients: list[CoefficientRecord]
    fiber: FiberReport | None = None
    realized: SDS | None = None
    realized_verdict: ZeroVerdict | None = None
    invariance: InvarianceReport | None = None

    @property
    def status(self) -> str:
        if self.reduced is None:
            return "fail" if self.fiber is not None and not self.fiber.passed else "inconclusive"
        verdicts = [c.verdict for c in self.coefficients if c.verdict is not None]
        if self.realized_verdict is not None:
            verdicts.append(self.realized_verdict)
        if any(v.status is ZeroStatus.NONZERO for v in verdicts):
            return "fail"
        if any(v.status is ZeroStatus.NUMERIC_ZERO for v in verdicts):
            return "inconclusive"
        return "pass"

    def to_dict(self) -> dict:
        out = {
            "map": self.map_name,
            "status": self.status,
            "reduced": None if self.reduced is None else str(self.reduced),
            "coefficients": [c.to_dict() for c in self.coefficients],
            "fiber": None if self.fiber is None else self.fiber.to_dict(),
        }
        if self.realized is not None:
            out["realized"] = {
                "drift": str(self.realized.drift),
                "noise": [str(v) for v in self.realized.noise],
                "verdict": self.realized_verdict.to_dict() if self.realized_verdict else None,
            }
        if self.invariance is not None:
            out["invariance"] = self.invariance.to_dict()
        return out


def carre_du_champ(A: DiffOp, phi: QuotientMap) -> dict[tuple[int, ...], sp.Expr]:
    """Source-side coefficients of the candidate reduced operator, by target multi-index."""
    same_chart(A.chart, phi.source)
    m = phi.target.dim
    comps = phi.components
    Aphi = [A.apply(c) for c in comps]
    out: dict[tuple[int, ...], sp.Expr] = {}
    c0 = A.zeroth_order()
    if c0 != 0:
        out[(0,) * m] = c0
    for j in range(m):
        alpha = tuple(1 if i == j else 0 for i in range(m))
        out[alpha] = simplify(Aphi[j] - c0 * comps[j])
    for j in range(m):
        for k in range(j, m):
            gamma = A.apply(comps[j] * comps[k]) - comps[j] * Aphi[k] - comps[k] * Aphi[j] + c0 * comps[j] * comps[k]
            alpha = [0] * m
            alpha[j] += 1
            alpha[k] += 1
            # symmetric pair (j,k),(k,j) collapses to one mixed monomial
            out[tuple(alpha)] = simplify(gamma / 2 if j == k else gamma)
    return out


def _rewrite(c: sp.Expr, phi: QuotientMap) -> tuple[sp.Expr | None, str]:
    tsyms = phi.target.symbols
    src = set(phi.source.symbols) - set(tsyms)

    def clean(e):
        e = simplify(e)
        return e if not (e.free_symbols & src) else None

    if phi.section is not None:
        e = clean(c.subs(dict(zip(phi.source.symbols, phi.section)), simultaneous=True))
        if e is not None:
            return e, "section"
    e = clean(c.subs(dict(zip(phi.components, tsyms))))
    if e is not None:
        return e, "substitution"
    m = phi.target.dim
    eqs = [comp - t for comp, t in zip(phi.components, tsyms)]
    for subset in itertools.combinations(phi.source.symbols, m):
        if not (c.free_symbols & set(subset)):
            continue
        try:
            sols = sp.solve(eqs, subset, dict=True)
        except (NotImplementedError, ValueError):
            continue
        for sol in sols:
            e = clean(c.subs(sol, simultaneous=True))
            if e is not None:
                return e, "solve"
    return None, "none"


def project_generator(A: DiffOp, phi: QuotientMap, samples: int = 32, seed: int = 0) -> ReductionReport:
    """Reduced operator on ``phi.target`` with per-coefficient verdicts.

    Raises :class:`NotProjectable` (carrying the witness pair) when a
    coefficient differs between two points of one fibre, and
    :class:`NoSymbolicRewrite` when the coefficients are fibre-constant on
    the samples but could not be expressed in target coordinates.
    """
    raw = carre_du_champ(A, phi)
    records: list[CoefficientRecord] = []
    failed: dict[str, sp.Expr] = {}
    reduced: dict[tuple[int, ...], sp.Expr] = {}
    for alpha, c in raw.items():
        label = monomial_label(phi.target, alpha)
        if c == 0:
            continue
        e, method = _rewrite(c, phi)
        if e is not None:
            v = is_zero(phi.pullback(e) - c, phi.source, samples, seed)
            if not v.is_zero:
                e, method = None, "rejected"
        else:
            v = None
        records.append(CoefficientRecord(label, c, e, method, v.labelled(label) if v is not None else None))
        if e is None:
            failed[label] = c
        else:
            reduced[alpha] = e
    if failed:
        fiber = fiber_constancy(phi, raw_by_label(raw, phi), samples, seed)
        if not fiber.passed:
            raise NotProjectable(
                f"{phi.name}: coefficient {fiber.witness['coefficient']} is not constant on fibres",
                fiber.witness,
            )
        raise NoSymbolicRewrite(
            f"{phi.name}: coefficients {sorted(failed)} look fibre-constant but have no symbolic form in "
            f"{list(phi.target.names)}"
        )
    return ReductionReport(phi.name, DiffOp(phi.target, reduced), records)


def raw_by_label(raw: Mapping[tuple[int, ...], sp.Expr], phi: QuotientMap) -> dict[str, sp.Expr]:
    return {monomial_label(phi.target, a): c for a, c in raw.items() if c != 0}


# --------------------------------------------------------------------------
# realization


def _psd_check(M: sp.Matrix, chart: Chart, samples: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    num = _Numeric(chart.symbols, list(M), rng)
    n = M.shape[0]
    for p in chart.sample(rng, samples):
        vals = num(list(p.values()))
        if vals is None:
            continue
        m = np.array(vals).reshape(n, n)
        w = np.linalg.eigvalsh((m + m.T) / 2)
        if w.size and w[0] < -1e-9 * (1 + np.max(np.abs(w))):
            raise IndefiniteMatrix(f"diffusion matrix is indefinite at {p} (eigenvalue {w[0]:.3g})")


def realize_sds(A: DiffOp, samples: int = 32, seed: int = 0) -> SDS:
    """An SDS whose generator is A.

    Noise fields come from a symbolic square root of 2a (componentwise sqrt
    when a is diagonal, Cholesky otherwise); the drift Y0 = A - 1/2 sum Y_i^2
    absorbs the Stratonovich correction.
    """
    if A.order > 2:
        raise OrderError(f"operator of order {A.order} is not a diffusion generator")
    if A.zeroth_order() != 0:
        raise ValueError("operator has a zeroth-order term")
    chart = A.chart
    M = (2 * A.second_order_matrix()).applyfunc(simplify)
    _psd_check(M, chart, samples, seed)
    n = chart.dim
    diagonal = all(M[i, j] == 0 for i in range(n) for j in range(n) if i != j)
    noise: list[VectorField] = []
    if diagonal:
        for j in range(n):
            if M[j, j] != 0:
                comps = [0] * n
                comps[j] = sp.sqrt(M[j, j])
                noise.append(VectorField(chart, tuple(comps)))
    else:
        try:
            L = M.cholesky(hermitian=False).applyfunc(simplify)
        except (ValueError, ZeroDivisionError) as exc:
            raise NoSquareRoot(f"no symbolic Cholesky factor: {exc}") from exc
        if L.has(sp.nan, sp.zoo, sp.oo):
            raise NoSquareRoot("Cholesky pivots do not simplify")
        for k in range(n):
            col = tuple(L[:, k])
            if any(c != 0 for c in col):
                noise.append(VectorField(chart, col))
    half = sp.Rational(1, 2)
    squares = DiffOp.zero(chart)
    for V in noise:
        Vop = DiffOp.from_field(V)
        squares = squares + half * (Vop @ Vop)
    rest = A - squares
    drift = rest.first_order_field()
    Y = SDS(chart, drift, tuple(noise))
    check = operator_verdict(generator(Y) - A, samples, seed)
    if not check.is_zero:
        raise NoSquareRoot(f"realized system does not reproduce the generator ({check})")
    return Y


def reduce_sds(X: SDS, phi: QuotientMap, samples: int = 32, seed: int = 0) -> ReductionReport:
    """Project A_X through phi and realize the result as an SDS on the target."""
    report = project_generator(generator(X), phi, samples, seed)
    Y = realize_sds(report.reduced, samples, seed)
    report.realized = Y
    report.realized_verdict = operator_verdict(generator(Y) - report.reduced, samples, seed).labelled("A_Y - reduced")
    return report


def diffusion_morphism_check(A: DiffOp, phi: QuotientMap, B: DiffOp, degree: int = 3, samples: int = 32) -> ZeroVerdict:
    """A(Phi* f) = Phi*(B f) for all target monomials f of degree <= ``degree``."""
    same_chart(B.chart, phi.target)
    verdicts = []
    syms = phi.target.symbols
    for powers in itertools.product(range(degree + 1), repeat=len(syms)):
        if sum(powers) > degree:
            continue
        f = sp.Mul(*[s**k for s, k in zip(syms, powers)])
        lhs = A.apply(phi.pullback(f))
        rhs = phi.pullback(B.apply(f))
        verdicts.append(is_zero(lhs - rhs, phi.source, samples).labelled(render(f)))
    return ZeroVerdict.combine(verdicts)


# --------------------------------------------------------------------------
# projectability


@dataclass
class ProjectabilityReport:
    mode: str
    passed: bool
    witness: dict | None
    pairs: int = 0
    method: str = "fiber-sampling"
    reduced: DiffOp | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "status": "PASS" if self.passed else "FAIL",
            "witness": self.witness,
            "pairs": self.pairs,
            "method": self.method,
            "reduced": None if self.reduced is None else str(self.reduced),
        }


def projectability_check(X: SDS, phi: QuotientMap, mode: str = "diffusion", samples: int = 32, seed: int = 0) -> ProjectabilityReport:
    """Whether X (strict, deterministic) or its law (diffusion) descends through phi."""
    same_chart(X.chart, phi.source)
    if mode == "diffusion":
        try:
            rep = project_generator(generator(X), phi, samples, seed)
        except NotProjectable as exc:
            return ProjectabilityReport(mode, False, exc.witness)
        return ProjectabilityReport(mode, True, None, 0, "symbolic", rep.reduced)
    if mode == "deterministic":
        if not X.deterministic:
            raise ValueError("deterministic mode needs a system without noise")
        fields = {"X0": X.drift}
    elif mode == "strict":
        fields = {f"X{i}": V for i, V in enumerate(X.fields)}
    else:
        raise ValueError(f"unknown mode {mode!r}; use strict, diffusion or deterministic")
    exprs = {}
    for name, V in fields.items():
        for tname, comp in zip(phi.target.names, phi.components):
            exprs[f"{name}({tname})"] = apply_field(V, comp)
    rep = fiber_constancy(phi, exprs, samples, seed)
    return ProjectabilityReport(mode, rep.passed, rep.witness, rep.pairs)


# --------------------------------------------------------------------------
# coordinate changes and the radial/angular split


def change_coordinates(obj, target: Chart, inverse: Mapping[str, sp.Expr] | Sequence[sp.Expr]):
    """Express a field or SDS in ``target`` coordinates.

    ``inverse`` gives the old coordinates as expressions in the new ones
    (for polar coordinates x = r cos(theta), y = r sin(theta)).  Stratonovich
    fields transform like ordinary vector fields.
    """
    if isinstance(obj, SDS):
        return SDS(
            target,
            change_coordinates(obj.drift, target, inverse),
            tuple(change_coordinates(v, target, inverse) for v in obj.noise),
        )
    if not isinstance(obj, VectorField):
        raise TypeError("change_coordinates expects a VectorField or an SDS")
    src = obj.chart
    if isinstance(inverse, Mapping):
        inverse = [inverse[n] for n in src.names]
    inv = [target.check_expr(as_expr(e)) for e in inverse]
    if len(inv) != src.dim or src.dim != target.dim:
        raise ValueError("coordinate change must be between charts of equal dimension")
    J = sp.Matrix(inv).jacobian(target.symbols)
    sub = dict(zip(src.symbols, inv))
    V = sp.Matrix([c.subs(sub, simultaneous=True) for c in obj.components])
    W = (J.inv() * V).applyfunc(simplify)
    return VectorField(target, tuple(W))


@dataclass
class Decomposition:
    radial: SDS
    angular: SDS

    @property
    def total(self) -> SDS:
        return self.radial + self.angular


def radial_angular_decompose(X: SDS, G: GroupAction | None = None, samples: int = 32) -> Decomposition:
    """Split a rotation-invariant diffusion on a polar chart into radial and angular SDS."""
    chart = X.chart
    if chart.dim != 2:
        raise ValueError("radial/angular split needs a two-dimensional polar chart")
    periodic = [i for i, c in enumerate(chart.coords) if c.periodic]
    if len(periodic) != 1:
        raise ValueError("polar chart needs exactly one periodic (angle) coordinate")
    ia = periodic[0]
    ir = 1 - ia
    if G is None:
        G = GroupAction(chart, (VectorField.basis(chart, chart.names[ia]),), "SO(2)")
    inv = diffusion_invariance(X, G, samples)
    if not inv.passed:
        raise InvarianceError(f"system is not diffusion invariant: {inv.verdict}")
    A = generator(X)
    cross = A.coeff((chart.names[ia], chart.names[ir]))
    if not is_zero(cross, chart, samples).is_zero:
        raise InvarianceError("generator mixes radial and angular second derivatives")
    radial = {a: c for a, c in A.coeffs.items() if a[ia] == 0 and a[ir] > 0}
    angular = {a: c for a, c in A.coeffs.items() if a[ir] == 0 and a[ia] > 0}
    return Decomposition(
        realize_sds(DiffOp(chart, radial, simplified=True), samples),
        realize_sds(DiffOp(chart, angular, simplified=True), samples),
    )
