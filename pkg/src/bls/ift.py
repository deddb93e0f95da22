"""Implicit sensitivities of the lower-level optimum and total derivatives.

Differentiating the root identity ``k(z*(p), p) = 0`` once gives the
implicit Jacobian

    D_p z* = -(D_z k)^{-1} D_p k,

and differentiating the first-order identity again and solving for the
stacked second derivative gives

    H_p z* = -[(D_z k)^{-1} (x) I] [ H_p k + (D_pz k)(D_p z*)
              + (I (x) (D_p z*)^T)(D_zp k)
              + (I (x) (D_p z*)^T)(H_z k)(D_p z*) ],

where the leading inverse is applied blockwise through the cached LU
factorization (``(A (x) I)^{-1} = A^{-1} (x) I``), never as a dense
Kronecker product.

Because the upper objective is scalar, its implicit curvature contribution
``(D_z f_U (x) I) H_p z*`` collapses to a weighted sum of the bracket
blocks with weights ``v`` from one extra transposed solve
(``v^T = D_z f_U (D_z k)^{-1}``) -- the fast strategy below, which never
forms ``H_p z*``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatchError, SingularMatrixError, SingularSystemError
from .linalg import (
    Factorization,
    StackedMatrix,
    factorize,
    kron_left_apply,
    kron_right_apply,
)
from .problem import FirstOrderBundle, SecondOrderBundle

__all__ = [
    "SensitivityResult",
    "ift_jacobian",
    "hessian_bracket",
    "ift_hessian",
    "sensitivity_vector",
    "total_gradient",
    "total_hessian",
]


@dataclass(frozen=True)
class SensitivityResult:
    """Implicit Jacobian plus the cached factorization that produced it.

    ``epsilon`` is the ridge added to ``D_z k`` before factorizing
    (0 means unregularized).  ``hp_z`` and ``v`` are optional attachments
    produced by :func:`ift_hessian` / :func:`sensitivity_vector`.
    """

    dp_z: np.ndarray  # m x n
    factorization: Factorization
    epsilon: float
    hp_z: StackedMatrix | None = None
    v: np.ndarray | None = None

    @property
    def dim_z(self) -> int:
        return self.dp_z.shape[0]

    @property
    def dim_p(self) -> int:
        return self.dp_z.shape[1]


def ift_jacobian(fb: FirstOrderBundle, epsilon: float = 0.0) -> SensitivityResult:
    """Solve ``(D_z k + eps I) D_p z* = -D_p k`` and cache the factorization."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    a = fb.dz_k if epsilon == 0.0 else fb.dz_k + epsilon * np.eye(fb.dz_k.shape[0])
    fact = factorize(a)
    if fact.singular:
        raise SingularSystemError(
            "D_z k is singular within tolerance; retry with a positive ridge "
            "epsilon (the regularized error bound accounts for it)"
        )
    dp_z = -fact.solve(fb.dp_k)
    dp_z.setflags(write=False)
    return SensitivityResult(dp_z=dp_z, factorization=fact, epsilon=float(epsilon))


def hessian_bracket(
    fb: FirstOrderBundle, sb: SecondOrderBundle, sens: SensitivityResult
) -> StackedMatrix:
    """Right-hand bracket of the implicit-Hessian system, ``m`` blocks of ``n x n``."""
    j = sens.dp_z
    m = j.shape[0]
    n = j.shape[1]
    if sb.hp_k.blocks != m or sb.hp_k.block_rows != n:
        raise DimensionMismatchError("second-order bundle does not match sensitivities")
    t2 = sb.dpz_k.data @ j
    t3 = kron_right_apply(j.T, sb.dzp_k)
    hz_j = StackedMatrix(m, m, n, sb.hz_k.data @ j)
    t4 = kron_right_apply(j.T, hz_j)
    return StackedMatrix(m, n, n, sb.hp_k.data + t2 + t3.data + t4.data)


def ift_hessian(
    fb: FirstOrderBundle, sb: SecondOrderBundle, sens: SensitivityResult
) -> StackedMatrix:
    """Stacked implicit Hessian ``H_p z*``; block ``i`` is the Hessian of ``z*_i``.

    Reuses the factorization cached in ``sens``; the blockwise inverse is
    one multi-column solve on the flattened bracket.
    """
    bracket = hessian_bracket(fb, sb, sens)
    m, n = sens.dim_z, sens.dim_p
    flat = bracket.tensor().reshape(m, n * n)
    try:
        solved = sens.factorization.solve(flat)
    except SingularMatrixError as exc:
        raise SingularSystemError(str(exc)) from exc
    return StackedMatrix.from_tensor(-solved.reshape(m, n, n))


def sensitivity_vector(fb: FirstOrderBundle, sens: SensitivityResult) -> np.ndarray:
    """``v`` with ``v^T = D_z f_U (D_z k + eps I)^{-1}`` via one transposed solve."""
    try:
        return sens.factorization.solve(fb.dz_fu.reshape(-1), transpose=True)
    except SingularMatrixError as exc:
        raise SingularSystemError(str(exc)) from exc


def total_gradient(fb: FirstOrderBundle, sens: SensitivityResult) -> np.ndarray:
    """Total derivative of the upper objective in ``p``, as a ``1 x n`` row."""
    if fb.dz_fu.shape[1] != sens.dim_z or fb.dp_fu.shape[1] != sens.dim_p:
        raise DimensionMismatchError("bundle and sensitivities disagree on dimensions")
    return fb.dp_fu + fb.dz_fu @ sens.dp_z


def total_hessian(
    fb: FirstOrderBundle,
    sb: SecondOrderBundle,
    sens: SensitivityResult,
    mode: str = "general",
    strategy: str = "fast",
) -> np.ndarray:
    """Total Hessian of the upper objective in ``p`` (symmetrized ``n x n``).

    ``mode="general"`` includes the mixed-partial cross terms of the upper
    objective; ``mode="paper_exact"`` drops them, which is exact whenever
    the upper objective has no direct second-order coupling between ``z``
    and ``p``.  ``strategy="fast"`` contracts the bracket with the
    sensitivity vector and never forms ``H_p z*``; ``strategy="full"``
    forms it explicitly.  Both strategies agree to roundoff.

    The result is averaged with its transpose: the true object is
    symmetric, so this is a projection of floating-point residue, not a
    correction.
    """
    if mode not in ("general", "paper_exact"):
        raise ValueError(f"mode must be 'general' or 'paper_exact', got {mode!r}")
    if strategy not in ("fast", "full"):
        raise ValueError(f"strategy must be 'fast' or 'full', got {strategy!r}")
    j = sens.dp_z
    h = sb.hp_fu + j.T @ sb.hz_fu @ j
    if mode == "general":
        cross = j.T @ sb.dzp_fu
        h = h + cross + cross.T
    if strategy == "fast":
        v = sens.v if sens.v is not None else sensitivity_vector(fb, sens)
        bracket = hessian_bracket(fb, sb, sens)
        h = h + kron_left_apply(-v.reshape(1, -1), bracket).block(0)
    else:
        hp_z = sens.hp_z if sens.hp_z is not None else ift_hessian(fb, sb, sens)
        h = h + kron_left_apply(fb.dz_fu, hp_z).block(0)
    return 0.5 * (h + h.T)


def with_hessian(
    fb: FirstOrderBundle, sb: SecondOrderBundle, sens: SensitivityResult
) -> SensitivityResult:
    """Return a copy of ``sens`` with ``hp_z`` (and ``v``) attached."""
    v = sens.v if sens.v is not None else sensitivity_vector(fb, sens)
    hp_z = sens.hp_z if sens.hp_z is not None else ift_hessian(fb, sb, sens)
    return replace(sens, hp_z=hp_z, v=v)
