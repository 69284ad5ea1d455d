"""
besov-relu: B-spline expansions of Besov functions compiled into sparse ReLU networks.

This package builds adaptive N-term and sparse grid approximations of Besov
and mixed smooth Besov functions, compiles them into explicit sparse ReLU
networks with certified error, and measures approximation and regression
rates against their closed-form references.

Example usage:
    >>> from besov_relu import DyadicIndex, Expansion, compile_expansion
    >>> e = Expansion(1, 1, {DyadicIndex((1,), (0,)): 1.0})
    >>> net = compile_expansion(e, 0.01)
    >>> abs(float(net.evaluate([0.5])[0]) - e(0.5)) <= 0.01
    True
"""

from besov_relu.approx import (
    AdaptiveBudget,
    NTermApproximation,
    adaptive_budget,
    adaptive_nterm_besov,
    adaptive_sparse_grid,
    quasi_interpolate,
    sample_besov_function,
    select_nterm,
    select_sparse_grid,
)
from besov_relu.bspline import Expansion, design_matrix, eval_cardinal, eval_tensor, sequence_norm
from besov_relu.compiler import (
    architecture_budget,
    build_bspline_unit,
    build_clip,
    build_mult,
    compile_expansion,
)
from besov_relu.exceptions import (
    AcceptanceError,
    BesovReluError,
    BudgetError,
    ConfigError,
    DimensionMismatchError,
    ExperimentInterrupted,
    NonFiniteError,
    ParameterError,
    SingularSystemError,
)
from besov_relu.models import DyadicIndex, Family, Mode, SpaceParams
from besov_relu.network import AffineLayer, SizeReport, SparseNetwork, combine
from besov_relu.regression import (
    Dataset,
    RateParams,
    RegressionConfig,
    fit_adaptive_dictionary,
    fit_krr,
    generate_data,
    rate_reference,
)

__version__ = "0.1.0"
__all__ = [
    "DyadicIndex",
    "SpaceParams",
    "Mode",
    "Family",
    "Expansion",
    "eval_cardinal",
    "eval_tensor",
    "design_matrix",
    "sequence_norm",
    "AffineLayer",
    "SizeReport",
    "SparseNetwork",
    "combine",
    "build_clip",
    "build_mult",
    "build_bspline_unit",
    "compile_expansion",
    "architecture_budget",
    "AdaptiveBudget",
    "sample_besov_function",
    "quasi_interpolate",
    "adaptive_budget",
    "adaptive_nterm_besov",
    "adaptive_sparse_grid",
    "NTermApproximation",
    "select_nterm",
    "select_sparse_grid",
    "Dataset",
    "RegressionConfig",
    "RateParams",
    "generate_data",
    "fit_adaptive_dictionary",
    "fit_krr",
    "rate_reference",
    "BesovReluError",
    "ParameterError",
    "DimensionMismatchError",
    "NonFiniteError",
    "BudgetError",
    "SingularSystemError",
    "ConfigError",
    "AcceptanceError",
    "ExperimentInterrupted",
]
