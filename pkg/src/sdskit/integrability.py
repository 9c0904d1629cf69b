"""Integrable SDS of type (p, q, r): verification, promotion, point classes, normal forms.

A system is a list of p diffusion generators, q vector fields and r
functions on one chart, with p + q + r equal to the dimension.  It is
integrable when all members commute as differential operators and their
principal symbols are functionally independent on the cotangent bundle.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import ZeroStatus, ZeroVerdict, as_expr, evaluate, instantiate, is_zero, simplify
from .geometry import SDS, Chart, ScalarField, VectorField, same_chart
from .operators import DiffOp, commutator, generator, monomial_label, operator_verdict
from .symbol import (
    CotangentPoly,
    RankReport,
    independence_rank,
    poisson_bracket,
    principal_symbol,
    span_at,
    symbol_verdict,
)

RANK_TOL = 1e-8


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class IntegrableSystem:
    chart: Chart
    lambdas: tuple[DiffOp, ...] = ()
    zs: tuple[VectorField, ...] = ()
    fs: tuple[sp.Expr, ...] = ()
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(self.lambdas))
        object.__setattr__(self, "zs", tuple(self.zs))
        fs = tuple(f.value if isinstance(f, ScalarField) else self.chart.check_expr(as_expr(f)) for f in self.fs)
        object.__setattr__(self, "fs", tuple(simplify(f) for f in fs))
        same_chart(self.chart, *(L.chart for L in self.lambdas), *(Z.chart for Z in self.zs))
        p, q, r = self.type
        if p + q + r != self.chart.dim:
            raise ValueError(f"type ({p},{q},{r}) does not add up to dimension {self.chart.dim}")
        for L in self.lambdas:
            if L.order > 2 or L.zeroth_order() != 0:
                raise ValueError("each Lambda must be a diffusion generator (order <= 2, no zeroth-order term)")
        if self.names is not None:
            if len(self.names) != p + q + r:
                raise ValueError("one name per member")
        else:
            object.__setattr__(
                self,
                "names",
                tuple(f"L{i + 1}" for i in range(p)) + tuple(f"Z{i + 1}" for i in range(q)) + tuple(f"F{i + 1}" for i in range(r)),
            )

    @property
    def type(self) -> tuple[int, int, int]:
        return (len(self.lambdas), len(self.zs), len(self.fs))

    def operators(self) -> list[tuple[str, DiffOp]]:
        ops = list(self.lambdas)
        ops += [DiffOp.from_field(Z) for Z in self.zs]
        ops += [DiffOp.multiplication(self.chart, F) for F in self.fs]
        return list(zip(self.names, ops))

    def symbols(self) -> list[tuple[str, CotangentPoly]]:
        return [(n, principal_symbol(A)) for n, A in self.operators()]


@dataclass
class IntegrabilityReport:
    type: tuple[int, int, int]
    commutators: dict[str, ZeroVerdict]
    rank: RankReport
    brackets: dict[str, ZeroVerdict] = field(default_factory=dict)
    points: list[dict] = field(default_factory=list)
    sds_commutators: dict[str, ZeroVerdict] = field(default_factory=dict)

    @property
    def all_verdicts(self) -> list[ZeroVerdict]:
        return list(self.commutators.values()) + list(self.sds_commutators.values())

    @property
    def passed(self) -> bool:
        return all(v.is_zero for v in self.all_verdicts) and self.rank.full

    @property
    def status(self) -> str:
        if not self.passed:
            return "fail"
        if any(v.status is ZeroStatus.NUMERIC_ZERO for v in self.all_verdicts):
            return "inconclusive"
        return "pass"

    def to_dict(self) -> dict:
        return {
            "type": list(self.type),
            "status": self.status,
            "commutators": {k: v.to_dict() for k, v in self.commutators.items()},
            "sds_commutators": {k: v.to_dict() for k, v in self.sds_commutators.items()},
            "rank": self.rank.to_dict(),
            "symbol_brackets": {k: v.to_dict() for k, v in self.brackets.items()},
            "points": self.points,
        }


def verify_system(sys: IntegrableSystem, samples: int = 32, seed: int = 0) -> IntegrabilityReport:
    """Pairwise commutators, symbol rank, symbol brackets and sample-point classes."""
    ops = sys.operators()
    comms = {}
    for (na, A), (nb, B) in itertools.combinations(ops, 2):
        comms[f"[{na},{nb}]"] = operator_verdict(commutator(A, B), samples, seed)
    syms = sys.symbols()
    rank = independence_rank([s for _, s in syms], samples, seed)
    brackets = {}
    for (na, P), (nb, Q) in itertools.combinations(syms, 2):
        brackets[f"{{{na},{nb}}}"] = symbol_verdict(poisson_bracket(P, Q), samples, seed)
    points = []
    for p in sys.chart.probes():
        try:
            points.append({"point": p, "class": classify_point(sys, p)})
        except (ValueError, ZeroDivisionError):
            continue
    return IntegrabilityReport(sys.type, comms, rank, brackets, points)


def verify_sds_integrable(X: SDS, sys: IntegrableSystem, samples: int = 32, seed: int = 0) -> IntegrabilityReport:
    """verify_system plus [A_X, member] = 0 for every member."""
    same_chart(X.chart, sys.chart)
    report = verify_system(sys, samples, seed)
    A = generator(X)
    for name, B in sys.operators():
        report.sds_commutators[f"[A_X,{name}]"] = operator_verdict(commutator(A, B), samples, seed)
    return report


def promote_to_p00(sys: IntegrableSystem) -> IntegrableSystem:
    """Type (p+q+r, 0, 0) system: 1/2 Z_i^2, then F_i^2 Lambda_1 (or 1/2 (F_i Z_1)^2 when p = 0)."""
    p, q, r = sys.type
    if p + q == 0:
        raise PreconditionError("promotion needs p + q >= 1")
    half = sp.Rational(1, 2)
    chart = sys.chart
    lambdas = list(sys.lambdas)
    names = list(sys.names[:p])
    for name, Z in zip(sys.names[p : p + q], sys.zs):
        Zop = DiffOp.from_field(Z)
        lambdas.append(half * (Zop @ Zop))
        names.append(f"{name}^2/2")
    for name, F in zip(sys.names[p + q :], sys.fs):
        if p >= 1:
            lambdas.append(F**2 * sys.lambdas[0])
            names.append(f"{name}^2*{sys.names[0]}")
        else:
            FZ = DiffOp.from_field(F * sys.zs[0])
            lambdas.append(half * (FZ @ FZ))
            names.append(f"({name}*{sys.names[p]})^2/2")
    return IntegrableSystem(chart, tuple(lambdas), (), (), tuple(names))


# --------------------------------------------------------------------------
# point classification


def _numeric(e: sp.Expr, chart: Chart, x: Mapping[str, float]) -> float:
    if e.atoms(sp.core.function.AppliedUndef):
        e = instantiate(e, np.random.default_rng(0))
    return evaluate(e, x)


def _rank(vectors: list[np.ndarray], n: int) -> int:
    if not vectors:
        return 0
    M = np.array(vectors, dtype=float).reshape(len(vectors), n)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def classify_point(sys: IntegrableSystem, x) -> str:
    """'regular', 'semi-regular' or 'singular' at x.

    Semi-regular: dF_1..dF_r independent at x and the Lambda spans together
    with the Z_j(x) fill the common kernel of the dF_i(x).  Regular adds
    independence of the Z_j(x).
    """
    chart = sys.chart
    n = chart.dim
    pt = chart.point(x)
    _, q, r = sys.type
    dF = [np.array([_numeric(sp.diff(F, s), chart, pt) for s in chart.symbols]) for F in sys.fs]
    if _rank(dF, n) < r:
        return "singular"
    vecs: list[np.ndarray] = []
    for L in sys.lambdas:
        vecs.extend(list(span_at(L, pt).basis))
    zvecs = [np.array([_numeric(c, chart, pt) for c in Z.components]) for Z in sys.zs]
    vecs.extend(zvecs)
    kernel_dim = n - r
    if _rank(vecs, n) != kernel_dim:
        return "singular"
    if dF and vecs:
        D = np.array(dF)
        V = np.array(vecs)
        scale = max(np.max(np.abs(D)), 1.0) * max(np.max(np.abs(V)), 1.0)
        if np.max(np.abs(D @ V.T)) > RANK_TOL * scale:
            return "singular"
    if _rank(zvecs, n) < q:
        return "semi-regular"
    return "regular"


# --------------------------------------------------------------------------
# torus invariance


def integer_relation(values: Sequence[float], bound: int = 20, tol: float = 1e-9) -> tuple[int, ...] | None:
    """A nonzero integer vector k with |k_i| <= bound and |sum k_i a_i| <= tol, if any."""
    a = np.asarray(values, dtype=float)
    p = a.size
    if p == 0:
        return None
    if p > 4:
        raise PreconditionError("relation search is limited to at most 4 frequencies; attest instead")
    rng = np.arange(-bound, bound + 1)
    grids = np.meshgrid(*([rng] * p), indexing="ij")
    K = np.stack([g.ravel() for g in grids], axis=1)
    K = K[np.any(K != 0, axis=1)]
    vals = np.abs(K @ a)
    hits = np.nonzero(vals <= tol * (1 + np.abs(K) @ np.abs(a)))[0]
    if hits.size == 0:
        return None
    best = hits[np.argmin(np.abs(K[hits]).sum(axis=1))]
    return tuple(int(k) for k in K[best])


@dataclass
class TorusReport:
    status: str  # pass | not-applicable | counterexample
    lie_derivative: ZeroVerdict
    violations: list[dict] = field(default_factory=list)
    incommensurability: str = "checked"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "lie_derivative": self.lie_derivative.to_dict(),
            "violations": self.violations,
            "incommensurability": self.incommensurability,
        }


def torus_invariance_check(
    L: DiffOp,
    Z: VectorField,
    angles: Sequence[str] | None = None,
    attest_incommensurable: bool = False,
    samples: int = 32,
    seed: int = 0,
) -> TorusReport:
    """If [Z, L] = 0 with Z = sum a_i(r) d/dtheta_i incommensurable, L is torus invariant.

    Returns ``not-applicable`` when L_Z L does not vanish, ``pass`` when every
    coefficient of L is independent of the angles and ``counterexample``
    otherwise (which would contradict the density argument).
    """
    chart = same_chart(L.chart, Z.chart)
    if angles is None:
        angles = [c.name for c in chart.coords if c.periodic]
    if not angles:
        raise PreconditionError("no angle coordinates")
    aidx = [chart.index(a) for a in angles]
    asyms = {chart.symbols[i] for i in aidx}
    for i, c in enumerate(Z.components):
        if i not in aidx and c != 0:
            raise PreconditionError(f"Z has a component along {chart.names[i]}")
        if c.free_symbols & asyms:
            raise PreconditionError("Z's coefficients must not depend on the angles")
    coeffs = [Z.components[i] for i in aidx]
    if all(c.is_number for c in coeffs):
        rel = integer_relation([float(c) for c in coeffs])
        if rel is not None:
            raise PreconditionError(f"frequencies are commensurable: integer relation {rel}")
        note = "checked"
    elif attest_incommensurable:
        note = "attested"
    else:
        raise PreconditionError("non-constant frequencies: incommensurability must be attested")
    lie = operator_verdict(commutator(DiffOp.from_field(Z), L), samples, seed)
    if not lie.is_zero:
        return TorusReport("not-applicable", lie, [], note)
    violations = []
    for alpha, c in L.items():
        for a in angles:
            v = is_zero(sp.diff(c, chart[a]), chart, samples, seed)
            if not v.is_zero:
                violations.append({"coefficient": monomial_label(chart, alpha), "angle": a, "verdict": v.to_dict()})
    return TorusReport("counterexample" if violations else "pass", lie, violations, note)


# --------------------------------------------------------------------------
# normal forms


def normal_form(
    X: SDS, section: Mapping[str, float | sp.Expr], samples: int = 32, seed: int = 0
) -> SDS:
    """Noise fields frozen at the angle section, drift A_X - 1/2 sum Y_i^2.

    ``section`` maps each angle coordinate to its section value.  The
    generator must not depend on those angles; the result is re-checked to be
    diffusion-equivalent to X.
    """
    chart = X.chart
    angles = list(section)
    for a in angles:
        if not chart.coordinate(a).periodic:
            raise PreconditionError(f"{a} is not an angle coordinate")
    A = generator(X)
    for alpha, c in A.items():
        for a in angles:
            v = is_zero(sp.diff(c, chart[a]), chart, samples, seed)
            if not v.is_zero:
                raise PreconditionError(
                    f"generator coefficient of {monomial_label(chart, alpha)} depends on {a} ({v})"
                )
    sub = {chart[a]: as_expr(v) for a, v in section.items()}
    noise = tuple(V.subs(sub) for V in X.noise)
    half = sp.Rational(1, 2)
    S = DiffOp.zero(chart)
    for V in noise:
        Vop = DiffOp.from_field(V)
        S = S + half * (Vop @ Vop)
    rest = A - S
    Y = SDS(chart, rest.first_order_field(), noise)
    check = operator_verdict(generator(Y) - A, samples, seed)
    if not check.is_zero:
        raise PreconditionError(f"normal form is not diffusion-equivalent to the input ({check})")
    return Y
