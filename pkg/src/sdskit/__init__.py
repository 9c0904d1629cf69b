"""sdskit: stochastic dynamical systems as vector fields and diffusion operators.

Symbolic layer: charts and fields (:mod:`sdskit.geometry`), differential
operators and generators (:mod:`sdskit.operators`), principal symbols
(:mod:`sdskit.symbol`), projection through quotient maps
(:mod:`sdskit.reduction`) and integrable systems
(:mod:`sdskit.integrability`).  Numerical layer: :mod:`sdskit.sim`.
Documents in the ``.sds`` language are handled by :mod:`sdskit.dsl`.
"""
from .expr import ZeroStatus, ZeroVerdict, is_zero, render, simplify
from .geometry import SDS, Chart, Coordinate, GroupAction, ScalarField, VectorField, lie_bracket
from .operators import DiffOp, commutator, compose, diffusion_equivalent, generator
from .reduction import QuotientMap, project_generator, realize_sds, reduce_sds

__version__ = "0.1.0"

__all__ = [
    "SDS",
    "Chart",
    "Coordinate",
    "DiffOp",
    "GroupAction",
    "QuotientMap",
    "ScalarField",
    "VectorField",
    "ZeroStatus",
    "ZeroVerdict",
    "commutator",
    "compose",
    "diffusion_equivalent",
    "generator",
    "is_zero",
    "lie_bracket",
    "project_generator",
    "realize_sds",
    "reduce_sds",
    "render",
    "simplify",
]
