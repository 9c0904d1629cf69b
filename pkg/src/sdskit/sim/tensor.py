"""Pathwise preservation of a constant 2-form by the stochastic flow."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import sympy as sp

from ..expr import ZeroVerdict
from ..geometry import SDS, is_hamiltonian
from .integrate import simulate
from .rng import RngConfig

DEFAULT_DTS = (4e-3, 2e-3, 1e-3, 5e-4)


class NotHamiltonian(ValueError):
    """A field of the system fails d(i_V omega) = 0."""

    def __init__(self, message: str, field: str, verdict: ZeroVerdict):
        super().__init__(message)
        self.field = field
        self.verdict = verdict


def _check_omega(omega, dim: int) -> np.ndarray:
    W = np.array(sp.Matrix(omega).evalf(), dtype=float)
    if W.shape != (dim, dim):
        raise ValueError("omega must be a square matrix matching the chart dimension")
    if not np.allclose(W, -W.T):
        raise ValueError("omega must be antisymmetric")
    if abs(np.linalg.det(W)) < 1e-12:
        raise ValueError("omega must be nondegenerate")
    return W


def check_hamiltonian(X: SDS, omega) -> None:
    """Raise :class:`NotHamiltonian` unless every field of X is locally Hamiltonian."""
    names = ["X0"] + [f"X{i + 1}" for i in range(len(X.noise))]
    for name, V in zip(names, X.fields):
        v = is_hamiltonian(V, omega)
        if not v.is_zero:
            raise NotHamiltonian(f"{name} is not Hamiltonian: d(i_{name} omega) != 0 ({v})", name, v)


def _default_probes(dim: int) -> list[tuple[np.ndarray, np.ndarray]]:
    e = np.eye(dim)
    return [(e[i], e[j]) for i in range(dim) for j in range(i + 1, dim)]


@dataclass
class TensorReport:
    dt: float
    T: float
    paths: int
    max_deviation: float
    mean_max_deviation: float

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "T": self.T,
            "paths": self.paths,
            "max_deviation": self.max_deviation,
            "mean_max_deviation": self.mean_max_deviation,
        }


def tensor_preservation(
    X: SDS,
    omega,
    x0,
    dt: float,
    T: float,
    rng: RngConfig | None = None,
    probes: Sequence[tuple[Sequence[float], Sequence[float]]] | None = None,
    paths: int = 1,
    refine: int = 1,
    record_every: int = 1,
) -> TensorReport:
    """max over t and probe pairs of |omega(J v, J w) - omega(v, w)| along the flow.

    J is the Jacobian of the flow integrated with the same Heun scheme as the
    path.  Fields are checked to be Hamiltonian first.
    """
    check_hamiltonian(X, omega)
    W = _check_omega(omega, X.chart.dim)
    probes = _default_probes(X.chart.dim) if probes is None else [(np.asarray(v, float), np.asarray(w, float)) for v, w in probes]
    n_steps = int(round(T / dt))
    times = np.arange(0, n_steps + 1, max(1, record_every)) * dt
    ens = simulate(X, x0, dt, T, paths, rng, sample_times=times, variational=True, refine=refine)
    J = ens.jacobians  # (paths, k, d, d)
    worst = np.zeros(paths)
    for v, w in probes:
        Jv = J @ v
        Jw = J @ w
        dev = np.abs(np.einsum("pki,ij,pkj->pk", Jv, W, Jw) - v @ W @ w)
        worst = np.maximum(worst, np.nanmax(dev, axis=1))
    return TensorReport(dt, T, paths, float(worst.max()), float(worst.mean()))


@dataclass
class ConvergenceReport:
    dts: list[float]
    deviations: list[float]
    order: float
    threshold: float = 0.9

    @property
    def passed(self) -> bool:
        return self.order >= self.threshold

    def to_dict(self) -> dict:
        return {"dts": self.dts, "deviations": self.deviations, "order": self.order, "threshold": self.threshold, "passed": self.passed}


def symplectic_convergence(
    X: SDS,
    omega,
    x0,
    T: float,
    rng: RngConfig | None = None,
    dts: Sequence[float] = DEFAULT_DTS,
    paths: int = 64,
    probes=None,
) -> ConvergenceReport:
    """Deviation at each dt (halving) on shared Brownian paths and its fitted order.

    Every level sums the increments of the finest level, so differences
    between levels are discretization error only.  The order is the
    least-squares slope of log(mean max deviation) against log(dt).
    """
    dts = sorted(dts, reverse=True)
    finest = dts[-1]
    devs = []
    for dt in dts:
        r = dt / finest
        refine = int(round(r))
        if abs(r - refine) > 1e-9:
            raise ValueError("step sizes must be integer multiples of the finest one")
        rep = tensor_preservation(X, omega, x0, dt, T, rng, probes, paths, refine=refine)
        devs.append(rep.mean_max_deviation)
    order = float(np.polyfit(np.log(dts), np.log(devs), 1)[0])
    return ConvergenceReport(list(dts), devs, order)
