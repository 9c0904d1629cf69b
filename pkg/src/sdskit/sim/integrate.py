"""Stratonovich Heun integration of single paths and vectorized ensembles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp

from ..expr import undefined_functions
from ..geometry import SDS, Chart
from .rng import RngConfig

DEFAULT_BATCH = 4096
DEFAULT_CHUNK = 256


class UnboundFunction(ValueError):
    """A field still contains an undefined function such as f(r)."""


def _vector_fn(chart: Chart, exprs: Sequence[sp.Expr]) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions into x (n, d) -> values (n, len(exprs))."""
    exprs = list(exprs)
    for e in exprs:
        if undefined_functions(sp.sympify(e)):
            raise UnboundFunction(f"{e} contains undefined functions; bind them before simulating")
    fn = sp.lambdify(chart.symbols, exprs, modules="numpy")

    def call(x: np.ndarray) -> np.ndarray:
        cols = [x[:, j] for j in range(x.shape[1])]
        vals = fn(*cols)
        out = np.empty((x.shape[0], len(exprs)))
        for k, v in enumerate(vals):
            out[:, k] = v
        return out

    return call


class CompiledSDS:
    """Numpy callables for the fields of an SDS (and their Jacobians on demand)."""

    def __init__(self, X: SDS):
        self.system = X
        self.chart = X.chart
        self.dim = X.chart.dim
        self.noise_dim = len(X.noise)
        comps = list(X.drift.components)
        for V in X.noise:
            comps.extend(V.components)
        self._fields = _vector_fn(self.chart, comps)
        self._jac = None
        lows, highs = [], []
        for c in self.chart.coords:
            lows.append(-np.inf if c.lower is None else float(c.lower))
            highs.append(np.inf if c.upper is None else float(c.upper))
        self.lower = np.array(lows)
        self.upper = np.array(highs)
        self.periods = np.array([float(c.period) if c.periodic else 0.0 for c in self.chart.coords])
        self.constrained = any(c.constrained for c in self.chart.coords)

    def fields(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Drift (n, d) and noise (m, n, d) at the points x (n, d)."""
        n, d = x.shape
        v = self._fields(x).reshape(n, 1 + self.noise_dim, d)
        return v[:, 0, :], np.transpose(v[:, 1:, :], (1, 0, 2))

    def jacobians(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """D(drift) (n, d, d) and D(noise_i) (m, n, d, d); entry [.., j, k] = d V^j / d x_k."""
        if self._jac is None:
            syms = self.chart.symbols
            entries = []
            for V in (self.system.drift,) + self.system.noise:
                entries.extend(sp.diff(c, s) for c in V.components for s in syms)
            self._jac = _vector_fn(self.chart, entries)
        n, d = x.shape
        v = self._jac(x).reshape(n, 1 + self.noise_dim, d, d)
        return v[:, 0], np.transpose(v[:, 1:], (1, 0, 2, 3))

    def in_domain(self, x: np.ndarray) -> np.ndarray:
        finite = np.isfinite(x).all(axis=1)
        if not self.constrained:
            return finite
        with np.errstate(invalid="ignore"):
            inside = np.all((x > self.lower) & (x < self.upper), axis=1)
        return finite & inside

    def wrap(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float, copy=True)
        for j, p in enumerate(self.periods):
            if p > 0:
                out[..., j] = np.mod(out[..., j], p)
        return out


def compile_sds(X: SDS | CompiledSDS) -> CompiledSDS:
    return X if isinstance(X, CompiledSDS) else CompiledSDS(X)


def heun_step(cs: CompiledSDS, x: np.ndarray, dW: np.ndarray, dt: float, J: np.ndarray | None = None):
    """One Stratonovich Heun step for points x (n, d) with increments dW (n, m).

    Returns the new points and, if J (n, d, d) is given, the propagated Jacobians.
    """
    with np.errstate(all="ignore"):
        f0, g0 = cs.fields(x)
        inc0 = f0 * dt + np.einsum("mnd,nm->nd", g0, dW)
        xp = x + inc0
        f1, g1 = cs.fields(xp)
        inc1 = f1 * dt + np.einsum("mnd,nm->nd", g1, dW)
        xn = x + 0.5 * (inc0 + inc1)
        if J is None:
            return xn, None
        a0, b0 = cs.jacobians(x)
        M0 = a0 * dt + np.einsum("mnjk,nm->njk", b0, dW)
        Jp = J + M0 @ J
        a1, b1 = cs.jacobians(xp)
        M1 = a1 * dt + np.einsum("mnjk,nm->njk", b1, dW)
        Jn = J + 0.5 * (M0 @ J + M1 @ Jp)
        return xn, Jn


def _grid(dt: float, T: float) -> np.ndarray:
    """Step sizes: dt repeated, with a shorter last step when T is not a multiple of dt."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    if not T >= 0:
        raise ValueError("horizon must be non-negative")
    ratio = T / dt
    full = int(round(ratio))
    if abs(ratio - full) <= 1e-9 * max(1.0, ratio):
        return np.full(full, float(dt))
    full = int(math.floor(ratio))
    return np.append(np.full(full, float(dt)), T - full * dt)


def _times(h: np.ndarray, dt: float) -> np.ndarray:
    t = np.arange(len(h) + 1) * float(dt)
    if len(h):
        t[-1] = t[-2] + h[-1]
    return t


def _start(cs: CompiledSDS, x0) -> np.ndarray:
    pt = cs.chart.point(x0)
    x = np.array([pt[n] for n in cs.chart.names], dtype=float)
    if not cs.in_domain(x[None, :])[0]:
        raise ValueError(f"initial point {pt} lies outside the chart domain")
    return x


class _Increments:
    """Brownian increments for a block of paths, drawn per path stream in time order."""

    def __init__(self, rng: RngConfig, streams: Sequence[int], m: int, refine: int = 1):
        self.gens = [rng.generator(s) for s in streams]
        self.m = m
        self.refine = refine

    def draw(self, h: np.ndarray) -> np.ndarray:
        """(paths, k, m) increments for the next k steps of sizes h."""
        k, r = len(h), self.refine
        raw = np.stack([g.standard_normal(k * r * self.m) for g in self.gens]).reshape(len(self.gens), k, r, self.m)
        return raw.sum(axis=2) * np.sqrt(h / r)[None, :, None]


@dataclass
class Trajectory:
    """A single path on the uniform grid 0, dt, ..., T (length T/dt + 1).

    ``states`` holds coordinates with periodic ones wrapped into [0, period);
    ``unwrapped`` keeps them accumulated on the real line.  After a first exit
    from the chart domain the path is truncated: later entries are NaN.
    """

    times: np.ndarray
    states: np.ndarray
    unwrapped: np.ndarray
    dt: float
    seed: int
    stream: int
    jacobians: np.ndarray | None = None
    exit_index: int | None = None

    @property
    def truncated(self) -> bool:
        return self.exit_index is not None

    def __len__(self) -> int:
        return len(self.times)


def integrate(
    X: SDS | CompiledSDS,
    x0,
    dt: float,
    T: float,
    rng: RngConfig | None = None,
    stream: int = 0,
    variational: bool = False,
) -> Trajectory:
    """Integrate one path of the Stratonovich system with the Heun scheme."""
    cs = compile_sds(X)
    h = _grid(dt, T)
    n = len(h)
    rng = rng or RngConfig()
    x = _start(cs, x0)[None, :]
    J = np.eye(cs.dim)[None] if variational else None
    states = np.full((n + 1, cs.dim), np.nan)
    jacs = np.full((n + 1, cs.dim, cs.dim), np.nan) if variational else None
    states[0] = x[0]
    if variational:
        jacs[0] = J[0]
    inc = _Increments(rng, [stream], cs.noise_dim)
    exit_index = None
    done = 0
    while done < n and exit_index is None:
        k = min(DEFAULT_CHUNK, n - done)
        dW = inc.draw(h[done : done + k])
        for s in range(k):
            x, J = heun_step(cs, x, dW[:, s, :], h[done + s], J)
            if not cs.in_domain(x)[0]:
                exit_index = done + s + 1
                break
            states[done + s + 1] = x[0]
            if variational:
                jacs[done + s + 1] = J[0]
        done += k
    times = _times(h, dt)
    return Trajectory(times, cs.wrap(states), states, dt, int(rng.seed), stream, jacs, exit_index)


@dataclass
class Ensemble:
    """States of n independent paths at the recorded times.

    ``states`` (n, k, d) keeps periodic coordinates unwrapped; entries at or
    after a path's exit from the domain are NaN.  ``brownian`` (n, m) holds
    the total Brownian displacement of every path over the whole horizon.
    """

    chart: Chart
    times: np.ndarray
    states: np.ndarray
    exit_times: np.ndarray
    brownian: np.ndarray
    dt: float
    seed: int
    jacobians: np.ndarray | None = None
    periods: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def truncated(self) -> np.ndarray:
        return np.isfinite(self.exit_times)

    def wrapped(self) -> np.ndarray:
        out = self.states.copy()
        for j, p in enumerate(self.periods):
            if p > 0:
                out[..., j] = np.mod(out[..., j], p)
        return out

    def index(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9 * max(1.0, abs(t))))
        if idx.size == 0:
            raise KeyError(f"time {t} was not recorded")
        return int(idx[0])

    def at(self, t: float) -> np.ndarray:
        """States (n, d) at recorded time t (unwrapped)."""
        return self.states[:, self.index(t), :]

    def coordinate(self, name: str, t: float | None = None) -> np.ndarray:
        j = self.chart.index(name)
        return self.states[:, :, j] if t is None else self.at(t)[:, j]


def _record_steps(times: np.ndarray, sample_times) -> np.ndarray:
    if sample_times is None:
        return np.array([len(times) - 1])
    want = np.unique(np.atleast_1d(np.asarray(sample_times, dtype=float)))
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    k = np.clip(np.searchsorted(times, want), 0, len(times) - 1)
    km = np.clip(k - 1, 0, len(times) - 1)
    k = np.where(np.abs(times[km] - want) < np.abs(times[k] - want), km, k)
    off = np.abs(times[k] - want) > 1e-6 * dt
    if off.any():
        raise ValueError(f"sample time {want[off][0]} is not on the step grid within the horizon")
    return np.unique(k)


def simulate(
    X: SDS | CompiledSDS,
    x0,
    dt: float,
    T: float,
    n: int,
    rng: RngConfig | None = None,
    sample_times=None,
    first_stream: int = 0,
    variational: bool = False,
    refine: int = 1,
    batch: int = DEFAULT_BATCH,
) -> Ensemble:
    """Ensemble of n paths from x0 recorded at ``sample_times`` (default: T only).

    Path i uses stream ``first_stream + i``.  With ``refine > 1`` each step's
    increment is the sum of ``refine`` finer increments of the same stream, so
    runs at dt and dt/refine share their Brownian paths.
    """
    if n < 1:
        raise ValueError("need at least one path")
    cs = compile_sds(X)
    h = _grid(dt, T)
    n_steps = len(h)
    times = _times(h, dt)
    rng = rng or RngConfig()
    x_start = _start(cs, x0)
    rec = _record_steps(times, sample_times)
    d, m = cs.dim, cs.noise_dim
    states = np.full((n, len(rec), d), np.nan)
    jacs = np.full((n, len(rec), d, d), np.nan) if variational else None
    exit_times = np.full(n, np.inf)
    totals = np.zeros((n, m))
    for lo in range(0, n, batch):
        hi = min(n, lo + batch)
        b = hi - lo
        x = np.tile(x_start, (b, 1))
        J = np.tile(np.eye(d), (b, 1, 1)) if variational else None
        alive = np.ones(b, dtype=bool)
        inc = _Increments(rng, range(first_stream + lo, first_stream + hi), m, refine)
        r = 0
        if rec[0] == 0:
            states[lo:hi, 0] = x
            if variational:
                jacs[lo:hi, 0] = J
            r = 1
        done = 0
        while done < n_steps:
            k = min(DEFAULT_CHUNK, n_steps - done)
            dW = inc.draw(h[done : done + k])
            totals[lo:hi] += dW.sum(axis=1)
            for s in range(k):
                x, J = heun_step(cs, x, dW[:, s, :], h[done + s], J)
                ok = cs.in_domain(x)
                newly = alive & ~ok
                if newly.any():
                    exit_times[lo:hi][newly] = times[done + s + 1]
                    alive &= ok
                    x[~alive] = x_start  # park dead paths on a harmless point
                    if variational:
                        J[~alive] = np.eye(d)
                step = done + s + 1
                if r < len(rec) and rec[r] == step:
                    states[lo:hi, r] = np.where(alive[:, None], x, np.nan)
                    if variational:
                        jacs[lo:hi, r] = np.where(alive[:, None, None], J, np.nan)
                    r += 1
            done += k
    return Ensemble(cs.chart, times[rec], states, exit_times, totals, dt, int(rng.seed), jacs, cs.periods)


@dataclass
class ObservableStats:
    mean: float
    variance: float
    stderr: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "stderr": self.stderr, "n": self.n}


@dataclass
class EnsembleStats:
    """Summary of observables over the surviving paths of an ensemble."""

    n: int
    truncated: int
    observables: dict[str, ObservableStats]
    histograms: dict[str, tuple[np.ndarray, np.ndarray]]
    samples: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def from_values(cls, values: Mapping[str, np.ndarray], bins: int = 40, total: int | None = None) -> "EnsembleStats":
        obs, hists, samples = {}, {}, {}
        count = None
        for name, v in values.items():
            v = np.asarray(v, dtype=float).ravel()
            v = v[np.isfinite(v)]
            count = v.size if count is None else min(count, v.size)
            if v.size == 0:
                raise ValueError(f"observable {name} has no finite samples")
            var = float(v.var(ddof=1)) if v.size > 1 else 0.0
            obs[name] = ObservableStats(float(v.mean()), var, math.sqrt(var / v.size), int(v.size))
            counts, edges = np.histogram(v, bins=bins)
            hists[name] = (edges, counts)
            samples[name] = v
        total = count if total is None else total
        return cls(int(total), int(total - (count or 0)), obs, hists, samples)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "truncated": self.truncated,
            "observables": {k: v.to_dict() for k, v in self.observables.items()},
            "histograms": {k: {"edges": e.tolist(), "counts": c.tolist()} for k, (e, c) in self.histograms.items()},
        }


def ensemble_stats(ens: Ensemble, t: float | None = None, observables: Mapping[str, Callable] | None = None, bins: int = 40) -> EnsembleStats:
    """Statistics of coordinates (or callables of the state) at time t (default: last)."""
    t = ens.times[-1] if t is None else t
    x = ens.at(t)
    if observables is None:
        wrapped = ens.wrapped()[:, ens.index(t), :]
        values = {name: wrapped[:, j] for j, name in enumerate(ens.chart.names)}
    else:
        values = {name: fn(x) for name, fn in observables.items()}
    return EnsembleStats.from_values(values, bins, ens.n)
