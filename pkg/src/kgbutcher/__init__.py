"""Tree-indexed perturbative solutions of the nonlinear Klein-Gordon equation.

Modules
-------
ptree        planar p-trees: grafting, enumeration, counting, keys
lattice      periodic lattice fields, free evolution, Duhamel solves, norms
series       tree coefficients, partial sums, convergence bounds, residuals
reference    direct time integration (Strang splitting, leapfrog)
quantum      truncated Fock space, Dyson series, graded operator identities
experiments  convergence studies shared by the CLI and the tests
cli          command-line runner (``kgbutcher``)
"""
from .exceptions import (
    ConfigError,
    DivergenceError,
    KGError,
    RangeError,
    ShapeError,
    TruncationError,
)
from .lattice import CauchyData, FieldSnapshot, GridSpec, TimeSampledField
from .ptree import LEAF, PTree, b_plus, canonical_key, count, decompose, enumerate_trees, parse
from .reference import IntegratorConfig, ReferenceIntegrator, integrate
from .series import ButcherSeries, SeriesConfig, build_table, partial_sum

__version__ = "0.1.0"

__all__ = [
    "ButcherSeries",
    "CauchyData",
    "ConfigError",
    "DivergenceError",
    "FieldSnapshot",
    "GridSpec",
    "IntegratorConfig",
    "KGError",
    "LEAF",
    "PTree",
    "RangeError",
    "ReferenceIntegrator",
    "SeriesConfig",
    "ShapeError",
    "TimeSampledField",
    "TruncationError",
    "b_plus",
    "build_table",
    "canonical_key",
    "count",
    "decompose",
    "enumerate_trees",
    "integrate",
    "parse",
    "partial_sum",
]
