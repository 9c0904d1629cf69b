"""Numerical side: Heun integration, ensembles and statistical checks."""
from .integrate import (
    CompiledSDS,
    Ensemble,
    EnsembleStats,
    ObservableStats,
    Trajectory,
    UnboundFunction,
    compile_sds,
    ensemble_stats,
    heun_step,
    integrate,
    simulate,
)
from .rng import RngConfig, default_seed
from .stats import (
    DensityReport,
    FokkerPlanck1D,
    GeneratorEstimate,
    InsufficientSamples,
    KSReport,
    MartingaleReport,
    NonStationary,
    TruncatedEnsemble,
    bias_order,
    empirical_generator,
    fokker_planck_density,
    histogram_mode,
    ks_compare,
    ks_critical,
    martingale_test,
    scheme_expectation,
    stationary_density_1d,
    unwrapped_angle,
)
from .tensor import ConvergenceReport, NotHamiltonian, TensorReport, check_hamiltonian, symplectic_convergence, tensor_preservation

__all__ = [
    "CompiledSDS",
    "ConvergenceReport",
    "DensityReport",
    "Ensemble",
    "EnsembleStats",
    "FokkerPlanck1D",
    "GeneratorEstimate",
    "InsufficientSamples",
    "KSReport",
    "MartingaleReport",
    "NonStationary",
    "NotHamiltonian",
    "ObservableStats",
    "RngConfig",
    "TensorReport",
    "Trajectory",
    "TruncatedEnsemble",
    "UnboundFunction",
    "bias_order",
    "check_hamiltonian",
    "compile_sds",
    "default_seed",
    "empirical_generator",
    "ensemble_stats",
    "fokker_planck_density",
    "heun_step",
    "histogram_mode",
    "integrate",
    "ks_compare",
    "ks_critical",
    "martingale_test",
    "scheme_expectation",
    "simulate",
    "stationary_density_1d",
    "symplectic_convergence",
    "tensor_preservation",
    "unwrapped_angle",
]
