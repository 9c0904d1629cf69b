"""Monte Carlo checks: generator estimates, stationary densities, martingales, KS."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
import sympy as sp
from scipy import integrate as quadrature
from scipy import stats as sstats

from ..expr import as_expr, evaluate
from ..geometry import SDS, ScalarField
from ..operators import generator
from .integrate import compile_sds, heun_step, simulate
from .rng import RngConfig

if TYPE_CHECKING:
    from ..reduction import QuotientMap

Z_THRESHOLD = 3.0
KS_CONSTANTS = {0.10: 1.224, 0.05: 1.358, 0.01: 1.628, 0.001: 1.949}


class NonStationary(RuntimeError):
    """The post-burn-in samples still drift."""


class TruncatedEnsemble(RuntimeError):
    """Too many paths left the chart domain for the estimate to mean anything."""


class InsufficientSamples(ValueError):
    pass


def _scalar(X: SDS, f) -> sp.Expr:
    if isinstance(f, ScalarField):
        return f.value
    return X.chart.check_expr(as_expr(f))


def _numpy_fn(X: SDS, e: sp.Expr):
    fn = sp.lambdify(X.chart.symbols, e, "numpy")

    def call(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(*(x[..., j] for j in range(x.shape[-1]))), dtype=float), x.shape[:-1])

    return call


# --------------------------------------------------------------------------
# empirical generator


@dataclass
class GeneratorEstimate:
    estimate: float
    stderr: float
    symbolic: float
    t: float
    n: int
    truncated: int
    bias_constant: float = 0.0

    @property
    def allowance(self) -> float:
        return Z_THRESHOLD * self.stderr + self.bias_constant * self.t

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.symbolic) <= self.allowance

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "symbolic": self.symbolic,
            "t": self.t,
            "n": self.n,
            "truncated": self.truncated,
            "bias_constant": self.bias_constant,
            "allowance": self.allowance,
            "passed": self.passed,
        }


def empirical_generator(
    X: SDS,
    f,
    x,
    t: float,
    n: int,
    rng: RngConfig | None = None,
    steps: int = 1,
    bias_constant: float = 0.0,
    control_variate: bool = True,
) -> GeneratorEstimate:
    """(E f(x_t) - f(x)) / t over n Heun paths, compared with A_X f (x).

    The control variate sum_i (X_i f)(x) W^i_t has mean zero exactly and
    removes the O(t^-1/2) noise of the raw estimator; its coefficient is
    fitted by least squares.  The pass rule is |estimate - A_X f(x)| <=
    3 stderr + bias_constant * t.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if n < 100:
        raise InsufficientSamples("empirical generator needs n >= 100 paths")
    F = _scalar(X, f)
    point = X.chart.point(x)
    symbolic = evaluate(generator(X).apply(F), point)
    f0 = evaluate(F, point)
    ens = simulate(X, point, t / steps, t, n, rng)
    xt = ens.at(t)
    ok = np.all(np.isfinite(xt), axis=1)
    if ok.sum() < n / 2:
        raise TruncatedEnsemble(f"{n - ok.sum()} of {n} paths left the domain before t={t}")
    y = (_numpy_fn(X, F)(xt[ok]) - f0) / t
    if control_variate and X.noise:
        coeffs = np.array([evaluate(sum(c * sp.diff(F, s) for c, s in zip(V.components, X.chart.symbols)), point) for V in X.noise])
        c = (ens.brownian[ok] @ coeffs) / t
        if np.var(c) > 0:
            beta = np.cov(y, c)[0, 1] / np.var(c, ddof=1)
            y = y - beta * c
    est = float(y.mean())
    se = float(y.std(ddof=1) / math.sqrt(y.size))
    return GeneratorEstimate(est, se, symbolic, t, int(ok.sum()), int(n - ok.sum()), bias_constant)


def scheme_expectation(X: SDS, f, x, t: float, nodes: int = 24) -> float:
    """Exact expectation of the one-step Heun estimator (E f(x_t) - f(x)) / t.

    The single Gaussian step is integrated by tensor Gauss-Hermite quadrature,
    so the result carries no Monte Carlo noise; it isolates the time
    discretization bias of the estimator.
    """
    m = len(X.noise)
    if m > 3:
        raise ValueError("quadrature over more than 3 noise dimensions is not supported")
    cs = compile_sds(X)
    F = _numpy_fn(X, _scalar(X, f))
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    pt = X.chart.point(x)
    x0 = np.array([pt[nm] for nm in X.chart.names], dtype=float)
    grid = np.array(list(itertools.product(z, repeat=m))) if m else np.zeros((1, 0))
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=m)]) if m else np.ones(1)
    xs = np.tile(x0, (len(grid), 1))
    xt, _ = heun_step(cs, xs, grid * math.sqrt(t), t)
    return float((weights @ F(xt) - F(x0[None, :])[0]) / t)


def bias_order(X: SDS, f, x, ts: Sequence[float]) -> tuple[np.ndarray, float]:
    """Biases of the one-step estimator at each t and the fitted order (log-log slope)."""
    symbolic = evaluate(generator(X).apply(_scalar(X, f)), X.chart.point(x))
    bias = np.array([abs(scheme_expectation(X, f, x, t) - symbolic) for t in ts])
    slope = float(np.polyfit(np.log(ts), np.log(bias), 1)[0])
    return bias, slope


# --------------------------------------------------------------------------
# stationary densities


@dataclass
class FokkerPlanck1D:
    """Normalized stationary density p ~ (1/a) exp(int b/a) on (lo, hi) for A = b d + a d^2."""

    a: object
    b: object
    lo: float
    hi: float
    ref: float
    norm: float

    def unnormalized(self, r: float) -> float:
        val, _ = quadrature.quad(lambda s: self.b(s) / self.a(s), self.ref, r, limit=200)
        return math.exp(val) / self.a(r)

    def __call__(self, r: float) -> float:
        return self.unnormalized(r) / self.norm

    def bin_average(self, edges: np.ndarray) -> np.ndarray:
        out = []
        for u, v in zip(edges[:-1], edges[1:]):
            mass, _ = quadrature.quad(self, u, v, limit=200)
            out.append(mass / (v - u))
        return np.array(out)

    def mass(self) -> float:
        return quadrature.quad(self, self.lo, self.hi, limit=200)[0]

    def mean(self) -> float:
        return quadrature.quad(lambda r: r * self(r), self.lo, self.hi, limit=200)[0]


def fokker_planck_density(X: SDS, lo: float, hi: float) -> FokkerPlanck1D:
    """Closed-form stationary density of a one-dimensional SDS via adaptive quadrature."""
    if X.chart.dim != 1:
        raise ValueError("stationary_density_1d needs a one-dimensional chart")
    if not lo < hi:
        raise ValueError("empty range")
    A = generator(X)
    (s,) = X.chart.symbols
    a_expr = A.coeff((2,))
    b_expr = A.coeff((1,))
    a = sp.lambdify(s, a_expr, "math")
    b = sp.lambdify(s, b_expr, "math")
    a_fn = lambda r: float(a(r))  # noqa: E731
    b_fn = lambda r: float(b(r))  # noqa: E731
    ref = 0.5 * (lo + hi) if math.isfinite(lo) and math.isfinite(hi) else (0.0 if not math.isfinite(lo) else lo + 1.0)
    fp = FokkerPlanck1D(a_fn, b_fn, lo, hi, ref, 1.0)
    for r in np.linspace(lo, hi, 11)[1:-1] if math.isfinite(lo) and math.isfinite(hi) else [ref]:
        if not a_fn(r) > 0:
            raise ValueError(f"noise vanishes at {r}")
    norm, _ = quadrature.quad(fp.unnormalized, lo, hi, limit=200)
    fp.norm = norm
    return fp


@dataclass
class DensityReport:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    oracle: np.ndarray
    sup_distance: float
    z_scores: np.ndarray
    mean: float
    mean_stderr: float
    median: float
    mode: float
    oracle_mean: float
    oracle_mass: float
    samples: int
    effective_samples: int
    truncated: int
    drift_z: float
    values: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "sup_distance": self.sup_distance,
            "max_abs_z": float(np.max(np.abs(self.z_scores))),
            "mean": self.mean,
            "mean_stderr": self.mean_stderr,
            "median": self.median,
            "mode": self.mode,
            "oracle_mean": self.oracle_mean,
            "oracle_mass": self.oracle_mass,
            "samples": self.samples,
            "effective_samples": self.effective_samples,
            "truncated": self.truncated,
            "burn_in_drift_z": self.drift_z,
        }

    def rows(self) -> list[dict]:
        return [
            {"lo": float(u), "hi": float(v), "count": int(c), "density": float(d), "oracle": float(o), "z": float(z)}
            for u, v, c, d, o, z in zip(self.edges[:-1], self.edges[1:], self.counts, self.density, self.oracle, self.z_scores)
        ]


def histogram_mode(values: np.ndarray, edges: np.ndarray, smooth: int = 5) -> float:
    """Mode from a moving-average-smoothed histogram refined by a parabola through the peak."""
    counts, _ = np.histogram(values, bins=edges)
    kernel = np.ones(smooth) / smooth
    sm = np.convolve(counts, kernel, mode="same")
    k = int(np.argmax(sm))
    centers = 0.5 * (edges[:-1] + edges[1:])
    if 0 < k < len(sm) - 1:
        y0, y1, y2 = sm[k - 1], sm[k], sm[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom < 0:
            return float(centers[k] + 0.5 * (y0 - y2) / denom * (centers[1] - centers[0]))
    return float(centers[k])


def stationary_density_1d(
    X: SDS,
    lo: float,
    hi: float,
    x0,
    bins: int = 60,
    burn_in: float = 5.0,
    T: float = 30.0,
    n: int = 20000,
    dt: float = 5e-3,
    sample_every: float = 0.5,
    rng: RngConfig | None = None,
    lift: tuple[SDS, QuotientMap] | None = None,
) -> DensityReport:
    """Empirical stationary histogram on (lo, hi) against the Fokker-Planck oracle.

    Samples are taken from every path every ``sample_every`` after
    ``burn_in``.  The burn-in check compares per-path means of the first and
    second halves of the samples; a |z| above 3 raises :class:`NonStationary`.

    With ``lift = (Z, phi)`` the paths are those of Z (started at ``x0`` on
    Z's chart) pushed through phi, while the oracle still comes from X.  This
    is how to sample a reduced process whose own chart has a singular drift
    at the boundary (explicit steps overshoot r = 0): when phi is a diffusion
    morphism from Z to X both give the same law.
    """
    if not T > burn_in:
        raise ValueError("horizon must exceed the burn-in time")
    fp = fokker_planck_density(X, lo, hi)
    times = np.arange(burn_in, T + 1e-12, sample_every)
    if lift is None:
        ens = simulate(X, x0, dt, T, n, rng, sample_times=times)
        vals = ens.states[:, :, 0]
    else:
        Z, phi = lift
        if phi.target.dim != 1 or phi.source != Z.chart:
            raise ValueError("lift map must go from the lifted chart to a line")
        ens = simulate(Z, x0, dt, T, n, rng, sample_times=times)
        vals = _numpy_fn(Z, phi.components[0])(ens.states)
    alive = np.all(np.isfinite(vals), axis=1)
    vals = vals[alive]
    if vals.shape[0] < 2:
        raise TruncatedEnsemble("almost every path left the domain")
    half = vals.shape[1] // 2
    diff = vals[:, :half].mean(axis=1) - vals[:, half : 2 * half].mean(axis=1)
    drift_z = float(diff.mean() / (diff.std(ddof=1) / math.sqrt(diff.size))) if diff.std() > 0 else 0.0
    if abs(drift_z) > Z_THRESHOLD:
        raise NonStationary(f"first and second half means differ by z={drift_z:.2f}")
    flat = vals.ravel()
    edges = np.linspace(lo if math.isfinite(lo) else flat.min(), hi if math.isfinite(hi) else flat.max(), bins + 1)
    counts, _ = np.histogram(flat, bins=edges)
    width = np.diff(edges)
    N = flat.size
    density = counts / (N * width)
    oracle = fp.bin_average(edges)
    prob = oracle * width
    se = np.sqrt(np.maximum(prob * (1 - prob), 1e-300) / N) / width
    z = (density - oracle) / se
    path_means = vals.mean(axis=1)
    return DensityReport(
        edges=edges,
        counts=counts,
        density=density,
        oracle=oracle,
        sup_distance=float(np.max(np.abs(density - oracle))),
        z_scores=z,
        mean=float(flat.mean()),
        mean_stderr=float(path_means.std(ddof=1) / math.sqrt(path_means.size)),
        median=float(np.median(flat)),
        mode=histogram_mode(flat, edges),
        oracle_mean=fp.mean(),
        oracle_mass=fp.mass(),
        samples=int(N),
        effective_samples=int(N),
        truncated=int((~alive).sum()),
        drift_z=drift_z,
        values=flat,
    )


# --------------------------------------------------------------------------
# martingale test


@dataclass
class MartingaleReport:
    z_scores: list[float]
    window_means: list[float]
    frequency: float
    frequency_stderr: float
    rate: float
    paths: int

    @property
    def passed(self) -> bool:
        return all(abs(z) < Z_THRESHOLD for z in self.z_scores)

    def to_dict(self) -> dict:
        return {
            "z_scores": self.z_scores,
            "window_means": self.window_means,
            "frequency": self.frequency,
            "frequency_stderr": self.frequency_stderr,
            "rate": self.rate,
            "paths": self.paths,
            "passed": self.passed,
        }


def _z(mean: float, se: float, tol: float = 0.0) -> float:
    if se > 0:
        return mean / se
    # zero spread: deterministic increments, compared up to roundoff
    return 0.0 if abs(mean) <= tol else math.copysign(math.inf, mean)


def unwrapped_angle(states: np.ndarray, i: int = 0, j: int = 1) -> np.ndarray:
    """Polar angle of coordinates (i, j) accumulated on the real line along each path.

    ``states`` is (paths, times, d); consecutive samples are joined on the
    nearest branch, so record often enough that the angle moves less than pi
    between samples.
    """
    theta = np.arctan2(states[..., j], states[..., i])
    return np.unwrap(theta, axis=1)


def martingale_test(times: np.ndarray, series: np.ndarray, rate: float = 1.0, windows: int = 10) -> MartingaleReport:
    """Zero-mean test of the increments of series - rate * t over disjoint windows.

    ``series`` has shape (paths, len(times)) and must be unwrapped (an angle
    accumulated on the real line).  Each window's increments over the paths
    give z = mean / stderr; the process passes when every |z| < 3.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    series = series[np.all(np.isfinite(series), axis=1)]
    if series.shape[0] < 30:
        raise InsufficientSamples("martingale test needs at least 30 paths per window")
    if len(times) < windows + 1:
        raise InsufficientSamples(f"need at least {windows + 1} recorded times")
    M = series - rate * times[None, :]
    cuts = np.linspace(0, len(times) - 1, windows + 1).round().astype(int)
    zs, means = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        inc = M[:, b] - M[:, a]
        se = float(inc.std(ddof=1) / math.sqrt(inc.size))
        tol = 1e-9 * max(1.0, float(np.abs(M[:, b]).max()), abs(rate) * (times[b] - times[a]))
        zs.append(_z(float(inc.mean()), se, tol))
        means.append(float(inc.mean()))
    span = times[-1] - times[0]
    freq = (series[:, -1] - series[:, 0]) / span
    return MartingaleReport(zs, means, float(freq.mean()), float(freq.std(ddof=1) / math.sqrt(freq.size)), rate, int(series.shape[0]))


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_critical(n_a: int, n_b: int, alpha: float = 0.01) -> float:
    c = KS_CONSTANTS.get(alpha, math.sqrt(-0.5 * math.log(alpha / 2)))
    return c * math.sqrt((n_a + n_b) / (n_a * n_b))


@dataclass
class KSReport:
    statistic: float
    critical: float
    pvalue: float
    n_a: int
    n_b: int
    alpha: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "critical": self.critical,
            "pvalue": self.pvalue,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "alpha": self.alpha,
            "passed": self.passed,
        }


def ks_compare(a, b, alpha: float = 0.01) -> KSReport:
    """Two-sample KS statistic against c(alpha) sqrt((n_a + n_b) / (n_a n_b))."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    a, b = a[np.isfinite(a)], b[np.isfinite(b)]
    if a.size == 0 or b.size == 0:
        raise InsufficientSamples("both samples must be nonempty")
    res = sstats.ks_2samp(a, b)
    return KSReport(float(res.statistic), ks_critical(a.size, b.size, alpha), float(res.pvalue), int(a.size), int(b.size), alpha)
