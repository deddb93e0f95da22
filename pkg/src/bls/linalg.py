"""Dense kernels: validated matrices, block-stacked derivatives, LU solves,
and broadcast Kronecker contractions.

Higher derivatives of a vector function with ``q`` outputs are stored as
``q`` vertically stacked blocks of shape ``r x c`` inside one ``(q*r) x c``
row-major matrix (:class:`StackedMatrix`); block ``i`` always belongs to the
``i``-th scalar output of the differentiated function.  The two broadcast
products ``(A (x) I) C`` and ``(I (x) B) C`` are evaluated blockwise without
ever materializing a Kronecker product.
"""

from __future__ import annotations

import contextlib
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (
    DimensionMismatchError,
    MinGainWarning,
    NonFiniteError,
    NonSquareError,
    SingularMatrixError,
)

# Pivots below SINGULARITY_RTOL * max|A| mark the factorization singular;
# callers must regularize explicitly instead of relying on silent fixes.
SINGULARITY_RTOL = 1e-12

__all__ = [
    "as_matrix",
    "as_vector",
    "StackedMatrix",
    "Factorization",
    "factorize",
    "kron_left_apply",
    "kron_right_apply",
    "min_gain",
    "OpCounter",
    "count_ops",
]


def as_matrix(
    a,
    rows: int | None = None,
    cols: int | None = None,
    *,
    square: bool = False,
    name: str = "matrix",
) -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 array and return a read-only copy.

    Raises:
        DimensionMismatchError: wrong rank or wrong ``rows``/``cols``.
        NonSquareError: ``square=True`` and the matrix is rectangular.
        NonFiniteError: any NaN/Inf entry.
    """
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionMismatchError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionMismatchError(f"{name} must have {cols} cols, got {arr.shape[1]}")
    if square and arr.shape[0] != arr.shape[1]:
        raise NonSquareError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_vector(a, size: int | None = None, *, name: str = "vector") -> np.ndarray:
    """Validate ``a`` as a finite 1-D float64 array and return a read-only copy."""
    arr = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    if size is not None and arr.shape[0] != size:
        raise DimensionMismatchError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StackedMatrix:
    """``blocks`` stacked ``block_rows x block_cols`` matrices in one 2-D array.

    ``data`` has shape ``(blocks * block_rows, block_cols)``; block ``i``
    occupies rows ``[i * block_rows, (i + 1) * block_rows)``.
    """

    blocks: int
    block_rows: int
    block_cols: int
    data: np.ndarray

    def __post_init__(self):
        data = as_matrix(
            self.data,
            rows=self.blocks * self.block_rows,
            cols=self.block_cols,
            name="stacked data",
        )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_tensor(cls, t: np.ndarray) -> "StackedMatrix":
        """Build from a ``(blocks, block_rows, block_cols)`` tensor."""
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 3:
            raise DimensionMismatchError(f"tensor must be 3-D, got ndim={t.ndim}")
        q, r, c = t.shape
        return cls(q, r, c, t.reshape(q * r, c))

    @classmethod
    def from_blocks(cls, blocks_list) -> "StackedMatrix":
        """Build from an iterable of equally shaped 2-D arrays."""
        mats = [np.asarray(b, dtype=np.float64) for b in blocks_list]
        if not mats:
            raise DimensionMismatchError("need at least one block")
        r, c = mats[0].shape
        for b in mats:
            if b.shape != (r, c):
                raise DimensionMismatchError("all blocks must share the same shape")
        return cls(len(mats), r, c, np.vstack(mats))

    @classmethod
    def zeros(cls, blocks: int, block_rows: int, block_cols: int) -> "StackedMatrix":
        return cls(blocks, block_rows, block_cols, np.zeros((blocks * block_rows, block_cols)))

    def block(self, i: int) -> np.ndarray:
        """Read-only view of block ``i``."""
        if not 0 <= i < self.blocks:
            raise IndexError(f"block index {i} out of range [0, {self.blocks})")
        return self.data[i * self.block_rows : (i + 1) * self.block_rows, :]

    def tensor(self) -> np.ndarray:
        """Read-only ``(blocks, block_rows, block_cols)`` view of the data."""
        return self.data.reshape(self.blocks, self.block_rows, self.block_cols)


@dataclass
class OpCounter:
    """Counts factorizations and triangular-solve calls for cost contracts.

    A ``solve`` with a multi-column right-hand side counts as one call;
    ``solve_columns`` additionally accumulates the column count.
    """

    factorizations: int = 0
    solve_calls: int = 0
    solve_columns: int = 0


_ACTIVE_COUNTER: list[OpCounter] = []


@contextlib.contextmanager
def count_ops():
    """Context manager collecting factorize/solve counts into an :class:`OpCounter`."""
    counter = OpCounter()
    _ACTIVE_COUNTER.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER.remove(counter)


def _tick(attr: str, amount: int = 1) -> None:
    for counter in _ACTIVE_COUNTER:
        setattr(counter, attr, getattr(counter, attr) + amount)


@dataclass(frozen=True)
class Factorization:
    """LU decomposition with partial pivoting of a square matrix.

    ``singular`` is set when the smallest pivot magnitude falls below
    ``SINGULARITY_RTOL * max|A|``; solving through a singular factorization
    raises so that callers regularize explicitly.
    """

    lu: np.ndarray = field(repr=False)
    piv: np.ndarray = field(repr=False)
    size: int
    smallest_pivot: float
    matrix_scale: float
    singular: bool

    def solve(self, b, *, transpose: bool = False) -> np.ndarray:
        """Solve ``A x = b`` (or ``A^T x = b``) for vector or matrix ``b``."""
        if self.singular:
            raise SingularMatrixError(
                f"matrix is singular within tolerance (smallest pivot "
                f"{self.smallest_pivot:.3e}, scale {self.matrix_scale:.3e}); "
                "add an explicit ridge before solving"
            )
        b_arr = np.asarray(b, dtype=np.float64)
        vector_input = b_arr.ndim == 1
        rhs = b_arr.reshape(self.size, -1) if vector_input else b_arr
        if rhs.shape[0] != self.size:
            raise DimensionMismatchError(
                f"rhs has {rhs.shape[0]} rows, factorization is {self.size}x{self.size}"
            )
        _tick("solve_calls")
        _tick("solve_columns", rhs.shape[1])
        x = lu_solve((self.lu, self.piv), rhs, trans=1 if transpose else 0)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("solve produced non-finite values")
        return x.reshape(-1) if vector_input else x


def factorize(a) -> Factorization:
    """LU-factorize a square matrix for repeated solves.

    The singularity flag is diagnostic: construction always succeeds so the
    caller can inspect ``smallest_pivot`` and decide how to regularize.
    """
    arr = as_matrix(a, square=True, name="factorize input")
    _tick("factorizations")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # scipy warns on exact zero pivots
        lu, piv = lu_factor(arr, check_finite=False)
    diag = np.abs(np.diag(lu)) if arr.shape[0] else np.array([0.0])
    smallest = float(diag.min()) if diag.size else 0.0
    scale = float(np.abs(arr).max()) if arr.size else 0.0
    singular = scale == 0.0 or smallest < SINGULARITY_RTOL * scale
    return Factorization(
        lu=lu,
        piv=piv,
        size=arr.shape[0],
        smallest_pivot=smallest,
        matrix_scale=scale,
        singular=singular,
    )


def kron_left_apply(a, c: StackedMatrix) -> StackedMatrix:
    """Apply ``A (x) I`` to a stacked matrix without forming the product.

    ``A`` is ``m x n`` and ``c`` must carry ``n`` blocks of ``p x r``; the
    result has ``m`` blocks, block ``j`` being ``sum_l A[j, l] * C_l``
    (``M~_{ijk} = A_{il} C~_{ljk}``).  Cost ``O(m n p r)``.
    """
    a_arr = as_matrix(a, name="A")
    if c.blocks != a_arr.shape[1]:
        raise DimensionMismatchError(
            f"A has {a_arr.shape[1]} cols but C has {c.blocks} blocks"
        )
    out = np.einsum("il,ljk->ijk", a_arr, c.tensor())
    return StackedMatrix.from_tensor(out)


def kron_right_apply(b, c: StackedMatrix) -> StackedMatrix:
    """Apply ``I (x) B`` to a stacked matrix without forming the product.

    ``B`` is ``m x n`` and each block of ``c`` must have ``n`` rows; block
    ``i`` of the result is ``B @ C_i`` (``M~_{ijk} = B_{jl} C~_{ilk}``).
    """
    b_arr = as_matrix(b, name="B")
    if c.block_rows != b_arr.shape[1]:
        raise DimensionMismatchError(
            f"B has {b_arr.shape[1]} cols but C blocks have {c.block_rows} rows"
        )
    out = np.einsum("jl,ilk->ijk", b_arr, c.tensor())
    return StackedMatrix.from_tensor(out)


def min_gain(a, *, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Smallest singular value of a square matrix.

    Computed by inverse power iteration on ``A^T A`` (block variant with a
    small subspace, so slowly separated bottom clusters still converge);
    this is the largest ``alpha`` with ``|A v| >= alpha |v|`` for all
    ``v``.  Returns ``0.0`` for singular input.

    Ritz values approach the bottom eigenvalue from above, so the result is
    safeguarded downward by the eigenpair residual (a symmetric-matrix
    perturbation bound) before taking the square root.  If the iteration
    cap is hit with a poor certificate, the best estimate is returned
    under a :class:`MinGainWarning`.
    """
    arr = as_matrix(a, square=True, name="min_gain input")
    m = arr.shape[0]
    if m == 0:
        return 0.0
    gram = arr.T @ arr
    fact = factorize(gram)
    if fact.singular:
        return 0.0
    block = min(8, m)
    # Deterministic start with a mild taper so no eigenvector is missed.
    x = np.zeros((m, block))
    for j in range(block):
        x[:, j] = np.roll(1.0 + 1e-3 * np.arange(m), j) + j * np.linspace(0.0, 1.0, m)
    x, _ = np.linalg.qr(x)
    lam_prev = np.inf
    lam = np.inf
    resid = np.inf
    for _ in range(max_iter):
        try:
            y = fact.solve(x)
        except SingularMatrixError:
            return 0.0
        if not np.all(np.isfinite(y)):
            return 0.0
        x, _ = np.linalg.qr(y)
        proj = x.T @ (gram @ x)
        theta, vecs = np.linalg.eigh(0.5 * (proj + proj.T))
        lam = float(theta[0])
        ritz = x @ vecs[:, 0]
        resid = float(np.linalg.norm(gram @ ritz - lam * ritz))
        scale = max(abs(lam), 1e-300)
        if abs(lam - lam_prev) <= tol * scale or resid <= 1e-8 * scale:
            return float(np.sqrt(max(lam - resid, 0.0)))
        lam_prev = lam
    if resid > 1e-6 * max(abs(lam), 1e-300):
        warnings.warn(
            f"min_gain did not converge in {max_iter} iterations "
            f"(residual {resid:.3e}); returning best estimate",
            MinGainWarning,
        )
    return float(np.sqrt(max(lam - resid, 0.0)))
