"""Second-order sensitivity analysis for bilevel programs.

Core pieces: implicit Jacobians/Hessians of lower-level optima
(:mod:`bls.ift`), finite-difference oracles (:mod:`bls.fdiff`), error
certificates for inexact lower solutions (:mod:`bls.bounds`), Newton-type
upper-level optimization (:mod:`bls.solvers`), built-in experiment problems
(:mod:`bls.problems`), and a FastAPI service (:mod:`bls.service`) with a
thin-client CLI (:mod:`bls.cli`).
"""

from .bounds import (
    BoundConstants,
    estimate_constants,
    first_order_bound,
    optimize_epsilon,
    regularized_bound,
    second_order_bound,
)
from .fdiff import DiffConfig, jacobian_fd, stacked_second_fd, total_gradient_fd
from .ift import (
    SensitivityResult,
    ift_hessian,
    ift_jacobian,
    sensitivity_vector,
    total_gradient,
    total_hessian,
)
from .linalg import (
    Factorization,
    StackedMatrix,
    factorize,
    kron_left_apply,
    kron_right_apply,
    min_gain,
)
from .problem import (
    AnalyticPartials,
    BilevelProblem,
    FirstOrderBundle,
    LowerSolution,
    SecondOrderBundle,
    first_bundle,
    residual,
    second_bundle,
)
from .problems import ProblemInstance, build_instance
from .solvers import (
    BarrierSpec,
    LowerConfig,
    OptimTrace,
    UpperConfig,
    apply_barrier,
    optimize_upper,
    pca_landscape,
    solve_lower,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AnalyticPartials",
    "BarrierSpec",
    "BilevelProblem",
    "BoundConstants",
    "DiffConfig",
    "Factorization",
    "FirstOrderBundle",
    "LowerConfig",
    "LowerSolution",
    "OptimTrace",
    "ProblemInstance",
    "SecondOrderBundle",
    "SensitivityResult",
    "StackedMatrix",
    "UpperConfig",
    "apply_barrier",
    "build_instance",
    "estimate_constants",
    "factorize",
    "first_bundle",
    "first_order_bound",
    "ift_hessian",
    "ift_jacobian",
    "jacobian_fd",
    "kron_left_apply",
    "kron_right_apply",
    "min_gain",
    "optimize_epsilon",
    "optimize_upper",
    "pca_landscape",
    "regularized_bound",
    "residual",
    "second_bundle",
    "second_order_bound",
    "sensitivity_vector",
    "solve_lower",
    "stacked_second_fd",
    "total_gradient",
    "total_gradient_fd",
    "total_hessian",
]
