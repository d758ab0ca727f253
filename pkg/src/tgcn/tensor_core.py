"""Third-order tensor algebra: mode-n products, M-transforms and the M-product.

Tensors are plain ``float64`` ndarrays of shape ``(I, J, T)``; frontal slice
``t`` is ``X[:, :, t]`` and the tube at ``(i, j)`` is ``X[i, j, :]``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "SingularMatrixError",
    "BandedLowerMatrix",
    "as_tensor3",
    "mode_n_product",
    "m_transform",
    "m_transform_adjoint",
    "inverse_m_transform",
    "inverse_m_transform_adjoint",
    "facewise_product",
    "m_product",
]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class SingularMatrixError(ArithmeticError):
    """A banded triangular system has a zero on its diagonal."""

    def __init__(self, index: int):
        super().__init__(f"mixing matrix is singular: zero diagonal entry at t={index}")
        self.index = index


def as_tensor3(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"{name} must be a third-order tensor, got ndim={X.ndim}")
    return X


class BandedLowerMatrix:
    """Lower-triangular ``T x T`` matrix with bandwidth ``band``.

    Entries are kept in ``bands`` with shape ``(T, band)``; ``bands[t, d]``
    holds ``M[t, t - d]``.  Positions with ``t - d < 0`` lie outside the
    matrix and are never read.

    Parameters
    ----------
    bands : array_like of shape (T, band)
    """

    def __init__(self, bands):
        bands = np.array(bands, dtype=np.float64)
        if bands.ndim != 2 or bands.shape[0] < 1 or bands.shape[1] < 1:
            raise ShapeError(f"bands must have shape (T, b) with T, b >= 1, got {bands.shape}")
        if bands.shape[1] > bands.shape[0]:
            raise ShapeError(f"band {bands.shape[1]} exceeds order {bands.shape[0]}")
        T, b = bands.shape
        # canonical zero in the unused upper-left corner
        for d in range(1, b):
            bands[:d, d] = 0.0
        bands.setflags(write=False)
        self.bands = bands

    @property
    def order(self) -> int:
        return self.bands.shape[0]

    @property
    def band(self) -> int:
        return self.bands.shape[1]

    @property
    def diagonal(self) -> np.ndarray:
        return self.bands[:, 0]

    @classmethod
    def identity(cls, order: int, band: int = 1) -> "BandedLowerMatrix":
        bands = np.zeros((order, band))
        bands[:, 0] = 1.0
        return cls(bands)

    @classmethod
    def from_dense(cls, M, band: int) -> "BandedLowerMatrix":
        """Extract the band of a dense matrix; entries outside it are dropped."""
        M = np.asarray(M, dtype=np.float64)
        T = M.shape[0]
        bands = np.zeros((T, band))
        for t in range(T):
            for d in range(min(band, t + 1)):
                bands[t, d] = M[t, t - d]
        return cls(bands)

    def to_dense(self) -> np.ndarray:
        T, b = self.bands.shape
        M = np.zeros((T, T))
        for d in range(b):
            idx = np.arange(d, T)
            M[idx, idx - d] = self.bands[d:, d]
        return M

    def in_band(self, t: int, k: int) -> bool:
        return 0 <= t - k < self.band

    def __repr__(self):
        return f"BandedLowerMatrix(order={self.order}, band={self.band})"


def mode_n_product(X, U, n: int) -> np.ndarray:
    """Contract ``X`` with the matrix ``U`` (``D x I_n``) along mode ``n``.

    ``n`` is 1-based, so ``n=3`` mixes frontal slices.
    """
    X = as_tensor3(X)
    U = np.asarray(U, dtype=np.float64)
    if n not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {n}")
    if U.ndim != 2 or U.shape[1] != X.shape[n - 1]:
        raise ShapeError(
            f"mode-{n} extent of X is {X.shape[n - 1]} but U has "
            f"{U.shape[1] if U.ndim == 2 else U.shape} columns"
        )
    out = np.tensordot(U, X, axes=([1], [n - 1]))
    return np.moveaxis(out, 0, n - 1)


def _check_order(X: np.ndarray, T: int):
    if X.shape[2] != T:
        raise ShapeError(f"mixing matrix has order {T} but X has {X.shape[2]} slices")


def m_transform(X, M) -> np.ndarray:
    """Mix frontal slices: slice ``t`` of the result is ``sum_k M[t, k] X[..., k]``.

    ``M`` is either a :class:`BandedLowerMatrix` (cost ``O(IJTb)``) or a dense
    ``T x T`` array.
    """
    X = as_tensor3(X)
    if not isinstance(M, BandedLowerMatrix):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ShapeError(f"mixing matrix must be square, got {M.shape}")
        _check_order(X, M.shape[0])
        return mode_n_product(X, M, 3)
    _check_order(X, M.order)
    out = X * M.bands[:, 0]
    for d in range(1, M.band):
        out[:, :, d:] += X[:, :, :-d] * M.bands[d:, d]
    return out


def m_transform_adjoint(X, M: BandedLowerMatrix) -> np.ndarray:
    """Apply ``M^T`` along mode 3, i.e. slice ``k`` gets ``sum_t M[t, k] X[..., t]``."""
    X = as_tensor3(X)
    _check_order(X, M.order)
    out = X * M.bands[:, 0]
    for d in range(1, M.band):
        out[:, :, :-d] += X[:, :, d:] * M.bands[d:, d]
    return out


def _check_diagonal(M: BandedLowerMatrix):
    zero = np.flatnonzero(M.diagonal == 0.0)
    if zero.size:
        raise SingularMatrixError(int(zero[0]))


def inverse_m_transform(X, M: BandedLowerMatrix) -> np.ndarray:
    """Solve ``m_transform(Z, M) = X`` for ``Z`` by forward substitution.

    Every tube is solved at once; each step touches at most ``b - 1`` earlier
    slices.  ``M`` is never inverted explicitly.
    """
    X = as_tensor3(X)
    if not isinstance(M, BandedLowerMatrix):
        raise TypeError("inverse_m_transform requires a BandedLowerMatrix")
    _check_order(X, M.order)
    _check_diagonal(M)
    Z = np.empty_like(X)
    bands = M.bands
    for t in range(M.order):
        acc = X[:, :, t].copy()
        for d in range(1, min(M.band, t + 1)):
            acc -= bands[t, d] * Z[:, :, t - d]
        Z[:, :, t] = acc / bands[t, 0]
    return Z


def inverse_m_transform_adjoint(X, M: BandedLowerMatrix) -> np.ndarray:
    """Solve ``M^T`` along mode 3 (back substitution on the transposed band)."""
    X = as_tensor3(X)
    _check_order(X, M.order)
    _check_diagonal(M)
    T, b = M.bands.shape
    Z = np.empty_like(X)
    bands = M.bands
    for k in range(T - 1, -1, -1):
        acc = X[:, :, k].copy()
        for d in range(1, min(b, T - k)):
            acc -= bands[k + d, d] * Z[:, :, k + d]
        Z[:, :, k] = acc / bands[k, 0]
    return Z


def facewise_product(X, Y) -> np.ndarray:
    """Slice-by-slice matrix product of ``X`` (I x J x T) and ``Y`` (J x K x T)."""
    X = as_tensor3(X, "X")
    Y = as_tensor3(Y, "Y")
    if X.shape[1] != Y.shape[0]:
        raise ShapeError(f"inner extents differ: X has {X.shape[1]} columns, Y has {Y.shape[0]} rows")
    if X.shape[2] != Y.shape[2]:
        raise ShapeError(f"slice counts differ: {X.shape[2]} vs {Y.shape[2]}")
    out = np.matmul(np.moveaxis(X, 2, 0), np.moveaxis(Y, 2, 0))
    return np.ascontiguousarray(np.moveaxis(out, 0, 2))


def m_product(X, Y, M: BandedLowerMatrix) -> np.ndarray:
    """M-product ``((X x3 M) facewise (Y x3 M)) x3 M^-1``."""
    return inverse_m_transform(facewise_product(m_transform(X, M), m_transform(Y, M)), M)
