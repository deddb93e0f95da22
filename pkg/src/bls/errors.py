"""Exception types shared across the package."""


class BilevelError(Exception):
    """Base class for all package errors."""


class NonSquareError(BilevelError):
    """A square matrix was required."""


class DimensionMismatchError(BilevelError):
    """Operand shapes are not conformable."""


class NonFiniteError(BilevelError):
    """A value contains NaN or Inf where finite entries are required."""


class SingularMatrixError(BilevelError):
    """Factorization hit a pivot below the singularity threshold."""


class SingularSystemError(BilevelError):
    """An implicit linear system is singular.

    Retrying with a positive ridge ``epsilon`` usually succeeds; the
    regularized error bound accounts for the ridge.
    """


class EvaluatorFailure(BilevelError):
    """A user-supplied evaluator raised or returned garbage."""


class NumericDiffFailure(BilevelError):
    """Finite-difference evaluation failed (non-finite stencil values)."""


class InfeasibleEvaluation(BilevelError):
    """A barrier term was evaluated outside the feasible interior."""


class LowerSolveFailure(BilevelError):
    """The lower-level solver did not produce a usable solution."""


class LineSearchFailure(BilevelError):
    """Backtracking exhausted its budget without sufficient decrease."""


class InfiniteBoundError(BilevelError):
    """An error bound is infinite because a gain constant is zero."""


class DegeneratePathError(BilevelError):
    """An optimization path does not span enough directions for projection."""


class MinGainWarning(UserWarning):
    """Inverse power iteration hit its iteration cap; estimate returned."""
