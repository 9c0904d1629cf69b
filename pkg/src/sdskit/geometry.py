"""Charts, vector fields, stochastic dynamical systems and group actions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import (
    ZeroVerdict,
    as_expr,
    evaluate,
    is_zero,
    render,
    simplify,
)


class ChartMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Coordinate:
    name: str
    period: sp.Expr | None = None
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.period is not None:
            object.__setattr__(self, "period", as_expr(self.period))
            if not float(self.period) > 0:
                raise ValueError(f"period of {self.name} must be positive")
            if self.lower is not None or self.upper is not None:
                raise ValueError(f"periodic coordinate {self.name} cannot carry bounds")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"inconsistent bounds for {self.name}")

    @property
    def periodic(self) -> bool:
        return self.period is not None

    @property
    def constrained(self) -> bool:
        return self.lower is not None or self.upper is not None

    @cached_property
    def symbol(self) -> sp.Symbol:
        if self.lower is not None and self.lower >= 0:
            return sp.Symbol(self.name, positive=True)
        return sp.Symbol(self.name, real=True)

    def box(self) -> tuple[float, float]:
        """Sampling interval used by numeric zero tests."""
        if self.periodic:
            return (0.0, float(self.period))
        lo, hi = self.lower, self.upper
        if lo is None and hi is None:
            return (-2.0, 2.0)
        if hi is None:
            return (lo + 0.1, lo + 3.0)
        if lo is None:
            return (hi - 3.0, hi - 0.1)
        margin = min(0.1, 0.05 * (hi - lo))
        return (lo + margin, hi - margin)

    def contains(self, value: float) -> bool:
        if self.lower is not None and not value > self.lower:
            return False
        if self.upper is not None and not value < self.upper:
            return False
        return True


@dataclass(frozen=True)
class Chart:
    """Ordered coordinates, each free, periodic, or bounded."""

    name: str
    coords: tuple[Coordinate, ...]

    def __post_init__(self):
        coords = tuple(c if isinstance(c, Coordinate) else Coordinate(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        names = [c.name for c in coords]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate coordinate names in chart {self.name}")

    @classmethod
    def euclidean(cls, names: Sequence[str] | int, name: str = "R") -> "Chart":
        if isinstance(names, int):
            if names < 1:
                raise ValueError("dimension must be >= 1")
            names = ["x", "y", "z"][:names] if names <= 3 else [f"x{i + 1}" for i in range(names)]
            if name == "R":
                name = f"R{len(names)}"
        return cls(name, tuple(Coordinate(n) for n in names))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coords)

    @cached_property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return tuple(c.symbol for c in self.coords)

    def __getitem__(self, name: str) -> sp.Symbol:
        return self.symbols[self.index(name)]

    def index(self, name: str | sp.Symbol) -> int:
        if isinstance(name, sp.Symbol):
            name = name.name
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"chart {self.name} has no coordinate {name!r}") from None

    def coordinate(self, name: str) -> Coordinate:
        return self.coords[self.index(name)]

    def check_expr(self, e: sp.Expr) -> sp.Expr:
        e = as_expr(e)
        extra = {s for s in e.free_symbols if s not in self.symbols}
        if extra:
            raise ChartMismatch(
                f"expression {render(e)} uses {sorted(map(str, extra))} outside chart {self.name}"
            )
        return e

    def probes(self) -> list[dict[str, float]]:
        """Deterministic lattice points tried before random samples."""
        out = []
        for k in range(4):
            p = {}
            for c in self.coords:
                lo, hi = c.box()
                if c.periodic:
                    p[c.name] = k * (hi - lo) / 4
                else:
                    p[c.name] = lo + (k + 1) * (hi - lo) / 5
            out.append(p)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> list[dict[str, float]]:
        pts = self.probes()[:n]
        for _ in range(n - len(pts)):
            pts.append({c.name: float(rng.uniform(*c.box())) for c in self.coords})
        return pts

    def wrap(self, point: np.ndarray) -> np.ndarray:
        out = np.array(point, dtype=float)
        for i, c in enumerate(self.coords):
            if c.periodic:
                out[..., i] = np.mod(out[..., i], float(c.period))
        return out

    def point(self, values: Mapping[str, float] | Sequence[float]) -> dict[str, float]:
        if isinstance(values, Mapping):
            return {n: float(values[n]) for n in self.names}
        values = list(values)
        if len(values) != self.dim:
            raise ValueError(f"point has {len(values)} entries, chart {self.name} has dimension {self.dim}")
        return dict(zip(self.names, map(float, values)))


def same_chart(*charts: Chart) -> Chart:
    first = charts[0]
    for c in charts[1:]:
        if c != first:
            raise ChartMismatch(f"chart mismatch: {first.name} vs {c.name}")
    return first


@dataclass(frozen=True)
class ScalarField:
    chart: Chart
    value: sp.Expr

    def __post_init__(self):
        object.__setattr__(self, "value", self.chart.check_expr(self.value))

    def __call__(self, point) -> float:
        return evaluate(self.value, self.chart.point(point))


@dataclass(frozen=True)
class VectorField:
    """First-order operator sum_j V^j d/dx_j; components ordered as the chart."""

    chart: Chart
    components: tuple[sp.Expr, ...]

    def __post_init__(self):
        comps = self.components
        if isinstance(comps, Mapping):
            unknown = set(comps) - set(self.chart.names)
            if unknown:
                raise ChartMismatch(f"components {sorted(unknown)} not in chart {self.chart.name}")
            comps = [comps.get(n, 0) for n in self.chart.names]
        comps = tuple(simplify(self.chart.check_expr(as_expr(c))) for c in comps)
        if len(comps) != self.chart.dim:
            raise ValueError("wrong number of components")
        object.__setattr__(self, "components", comps)

    @classmethod
    def basis(cls, chart: Chart, name: str) -> "VectorField":
        return cls(chart, {name: 1})

    @classmethod
    def zero(cls, chart: Chart) -> "VectorField":
        return cls(chart, (0,) * chart.dim)

    def __getitem__(self, name: str) -> sp.Expr:
        return self.components[self.chart.index(name)]

    def __add__(self, other: "VectorField") -> "VectorField":
        same_chart(self.chart, other.chart)
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        same_chart(self.chart, other.chart)
        return VectorField(self.chart, tuple(a - b for a, b in zip(self.components, other.components)))

    def __neg__(self) -> "VectorField":
        return VectorField(self.chart, tuple(-a for a in self.components))

    def __rmul__(self, coef) -> "VectorField":
        coef = self.chart.check_expr(as_expr(coef))
        return VectorField(self.chart, tuple(coef * a for a in self.components))

    def is_zero_field(self) -> bool:
        return all(c == 0 for c in self.components)

    def subs(self, mapping) -> "VectorField":
        return VectorField(self.chart, tuple(c.subs(mapping) for c in self.components))

    def at(self, point) -> np.ndarray:
        p = self.chart.point(point)
        return np.array([evaluate(c, p) for c in self.components])

    def __str__(self) -> str:
        terms = [f"({render(c)})*d/d{n}" for c, n in zip(self.components, self.chart.names) if c != 0]
        return " + ".join(terms) if terms else "0"


@dataclass(frozen=True)
class SDS:
    """Stratonovich system dx = X0 dt + sum_i X_i o dB^i."""

    chart: Chart
    drift: VectorField
    noise: tuple[VectorField, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "noise", tuple(self.noise))
        same_chart(self.chart, self.drift.chart, *(v.chart for v in self.noise))

    @property
    def fields(self) -> tuple[VectorField, ...]:
        return (self.drift,) + self.noise

    @property
    def deterministic(self) -> bool:
        return not self.noise

    def subs(self, mapping) -> "SDS":
        return SDS(self.chart, self.drift.subs(mapping), tuple(v.subs(mapping) for v in self.noise))

    def __add__(self, other: "SDS") -> "SDS":
        """Superposition with independent noises (generators add)."""
        same_chart(self.chart, other.chart)
        return SDS(self.chart, self.drift + other.drift, self.noise + other.noise)


@dataclass(frozen=True)
class GroupAction:
    """Connected group acting through its infinitesimal generators."""

    chart: Chart
    generators: tuple[VectorField, ...]
    name: str = "G"

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if not self.generators:
            raise ValueError("a group action needs at least one generator")
        same_chart(self.chart, *(g.chart for g in self.generators))

    def closure_report(self, samples: int = 16, seed: int = 0) -> dict:
        """Residual of each bracket [V_a, V_b] against constant combinations of the V_c.

        The structure constants are fitted by least squares jointly over all
        sample points, so pointwise spanning alone does not count as closure.
        """
        rng = np.random.default_rng(seed)
        pts = self.chart.sample(rng, samples)
        worst = 0.0
        for a in range(len(self.generators)):
            for b in range(a + 1, len(self.generators)):
                br = lie_bracket(self.generators[a], self.generators[b])
                rows, rhs = [], []
                for p in pts:
                    try:
                        basis = np.column_stack([g.at(p) for g in self.generators])
                        v = br.at(p)
                    except ValueError:
                        continue
                    rows.append(basis)
                    rhs.append(v)
                if not rows:
                    continue
                M, v = np.vstack(rows), np.concatenate(rhs)
                coef, *_ = np.linalg.lstsq(M, v, rcond=None)
                worst = max(worst, float(np.max(np.abs(M @ coef - v))))
        return {"closed": worst <= 1e-8, "max_residual": worst, "samples": samples}


def apply_field(V: VectorField, F: ScalarField | sp.Expr) -> sp.Expr:
    """Directional derivative V(F)."""
    if isinstance(F, ScalarField):
        same_chart(V.chart, F.chart)
        F = F.value
    else:
        F = V.chart.check_expr(as_expr(F))
    return simplify(sum((c * sp.diff(F, s) for c, s in zip(V.components, V.chart.symbols)), sp.S.Zero))


def lie_bracket(V: VectorField, W: VectorField) -> VectorField:
    chart = same_chart(V.chart, W.chart)
    return VectorField(chart, tuple(apply_field(V, w) - apply_field(W, v) for v, w in zip(V.components, W.components)))


def field_verdict(V: VectorField, samples: int = 64, seed: int = 0) -> ZeroVerdict:
    """Zero test of every component, labelled by coordinate."""
    return ZeroVerdict.combine(
        is_zero(c, V.chart, samples, seed).labelled(f"d/d{n}") for c, n in zip(V.components, V.chart.names)
    )


def poisson_field(chart: Chart, poisson: Sequence[Sequence], H) -> VectorField:
    """Hamiltonian field X^i = sum_j Pi^{ij} dH/dx_j of a Poisson tensor."""
    H = chart.check_expr(as_expr(H))
    P = sp.Matrix(poisson)
    grad = [sp.diff(H, s) for s in chart.symbols]
    return VectorField(chart, tuple(sum((P[i, j] * grad[j] for j in range(chart.dim)), sp.S.Zero) for i in range(chart.dim)))


def hamiltonian_field(chart: Chart, omega: Sequence[Sequence], H) -> VectorField:
    """Field X with i_X omega = -dH, where omega(v, w) = v^T Omega w is constant.

    With omega = dx^dy and H = (x^2 + y^2)/2 this is the rotation x d/dy - y d/dx.
    """
    return poisson_field(chart, sp.Matrix(omega).inv(), H)


def is_hamiltonian(V: VectorField, omega: Sequence[Sequence], samples: int = 32) -> ZeroVerdict:
    """Zero verdict of d(i_V omega): mixed partials of the contracted 1-form."""
    W = sp.Matrix(omega)
    n = V.chart.dim
    syms = V.chart.symbols
    alpha = [sum((V.components[i] * W[i, j] for i in range(n)), sp.S.Zero) for j in range(n)]
    verdicts = []
    for j in range(n):
        for k in range(j + 1, n):
            d = sp.diff(alpha[j], syms[k]) - sp.diff(alpha[k], syms[j])
            verdicts.append(is_zero(d, V.chart, samples).labelled(f"d{syms[k]}^d{syms[j]}"))
    return ZeroVerdict.combine(verdicts)
