"""Sparse 4th-order tensor storage and the multilinear kernels used by ALS.

A tensor is stored in coordinate (COO) form: an ``(nnz, 4)`` integer index
array plus an ``(nnz,)`` value array, lexicographically sorted with
duplicate coordinates summed at construction.  Factor matrices are plain
``(dim, rank)`` float64 ndarrays; kernels never materialize a dense tensor
or a dense unfolding.

Khatri-Rao convention: in ``khatri_rao(A, B)`` the rows of ``A`` vary
slowly, the rows of ``B`` vary fast, i.e. entry ``(p * B_rows + q, r)``
equals ``A[p, r] * B[q, r]``.  Chains are built highest mode leftmost, so
the lowest mode varies fastest, matching a Fortran-order unfolding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = [
    "SparseTensor4",
    "khatri_rao",
    "gram_hadamard",
    "mttkrp",
    "reconstruct_entry",
    "residual_norm",
]


@dataclass(frozen=True)
class SparseTensor4:
    """COO-format 4-mode tensor of nonnegative evidence counts.

    Parameters
    ----------
    dims : tuple of 4 positive ints
    indices : (nnz, 4) int array, every column within its dim bound
    values : (nnz,) nonnegative float array

    Entries are canonicalized at construction: sorted lexicographically,
    duplicate coordinates summed, exact zeros dropped.
    """

    dims: tuple[int, int, int, int]
    indices: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __init__(self, dims, entries=None, indices=None, values=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4 or any(d < 1 for d in dims):
            raise ContractViolation(f"dims must be four positive integers, got {dims}")
        if entries is not None:
            entries = list(entries)
            idx = np.array([e[:4] for e in entries], dtype=np.int64).reshape(-1, 4)
            val = np.array([e[4] for e in entries], dtype=np.float64)
        else:
            idx = np.asarray(indices, dtype=np.int64).reshape(-1, 4)
            val = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape[0] != val.shape[0]:
            raise ContractViolation("index and value counts differ")
        if idx.size:
            if idx.min() < 0 or np.any(idx >= np.asarray(dims, dtype=np.int64)):
                raise ContractViolation("tensor index out of range")
        if np.any(val < 0) or not np.all(np.isfinite(val)):
            raise ContractViolation("tensor values must be finite and nonnegative")
        idx, val = _canonicalize(idx, val)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        """Frobenius norm of the tensor."""
        return float(np.sqrt(np.dot(self.values, self.values)))

    @classmethod
    def from_dense(cls, array) -> "SparseTensor4":
        """Build from a small dense 4-d array, keeping nonzero cells."""
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 4:
            raise ContractViolation("from_dense expects a 4-d array")
        idx = np.argwhere(arr != 0)
        return cls(arr.shape, indices=idx, values=arr[tuple(idx.T)])


def _canonicalize(idx, val):
    """Sort lexicographically, merge duplicate coordinates, drop zeros."""
    if idx.shape[0] == 0:
        return idx.reshape(0, 4), val
    order = np.lexsort((idx[:, 3], idx[:, 2], idx[:, 1], idx[:, 0]))
    idx, val = idx[order], val[order]
    new_group = np.empty(idx.shape[0], dtype=bool)
    new_group[0] = True
    new_group[1:] = np.any(idx[1:] != idx[:-1], axis=1)
    starts = np.flatnonzero(new_group)
    merged = np.add.reduceat(val, starts)
    idx = idx[starts]
    keep = merged != 0
    return np.ascontiguousarray(idx[keep]), merged[keep]


def _check_factor(U, rows=None, rank=None, name="factor"):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2:
        raise ContractViolation(f"{name} must be 2-d, got shape {U.shape}")
    if rows is not None and U.shape[0] != rows:
        raise ContractViolation(f"{name} has {U.shape[0]} rows, expected {rows}")
    if rank is not None and U.shape[1] != rank:
        raise ContractViolation(f"{name} has rank {U.shape[1]}, expected {rank}")
    return U


def _check_factors(X: SparseTensor4, factors):
    if len(factors) != 4:
        raise ContractViolation("expected one factor per tensor mode")
    rank = np.asarray(factors[0]).shape[1]
    return [
        _check_factor(U, rows=d, rank=rank, name=f"mode-{m} factor")
        for m, (U, d) in enumerate(zip(factors, X.dims))
    ]


def khatri_rao(A, B) -> np.ndarray:
    """Columnwise Kronecker product of two factor matrices.

    Column ``r`` of the result is ``kron(A[:, r], B[:, r])``: the result has
    ``A_rows * B_rows`` rows and entry ``(p * B_rows + q, r)`` equal to
    ``A[p, r] * B[q, r]``.
    """
    A = _check_factor(A, name="A")
    B = _check_factor(B, name="B")
    if A.shape[1] != B.shape[1]:
        raise ContractViolation(
            f"rank mismatch: {A.shape[1]} vs {B.shape[1]} columns"
        )
    return np.repeat(A, B.shape[0], axis=0) * np.tile(B, (A.shape[0], 1))


def gram_hadamard(factors, skip_mode: int) -> np.ndarray:
    """Hadamard product of the factor Gram matrices, skipping one mode.

    Returns the elementwise product of ``U.T @ U`` over every factor except
    ``factors[skip_mode]``; the result is symmetric positive semidefinite.
    """
    if not 0 <= skip_mode < len(factors):
        raise ContractViolation(f"skip_mode {skip_mode} out of range")
    rank = np.asarray(factors[0]).shape[1]
    out = np.ones((rank, rank))
    for m, U in enumerate(factors):
        if m == skip_mode:
            continue
        U = _check_factor(U, rank=rank, name=f"mode-{m} factor")
        out *= U.T @ U
    return out


def mttkrp(X: SparseTensor4, factors, mode: int) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product, over nonzeros only.

    Equals the mode-``mode`` unfolding of ``X`` multiplied by the Khatri-Rao
    chain of the remaining factors (highest mode leftmost), computed by
    accumulating ``value * prod_of_other_factor_rows`` per nonzero without
    ever forming the unfolding.
    """
    factors = _check_factors(X, factors)
    if not 0 <= mode < 4:
        raise ContractViolation(f"mode {mode} out of range")
    rank = factors[0].shape[1]
    out = np.zeros((X.dims[mode], rank))
    if X.nnz == 0:
        return out
    weighted = X.values[:, None].copy()
    for m in range(4):
        if m != mode:
            weighted = weighted * factors[m][X.indices[:, m], :]
    np.add.at(out, X.indices[:, mode], weighted)
    return out


def reconstruct_entry(factors, norms, index) -> float:
    """Model value at one cell: sum over components of the scaled factor products."""
    norms = np.asarray(norms, dtype=np.float64)
    index = tuple(int(i) for i in index)
    if len(index) != 4:
        raise ContractViolation("index must have four coordinates")
    acc = norms.copy()
    for m, U in enumerate(factors):
        U = np.asarray(U, dtype=np.float64)
        if not 0 <= index[m] < U.shape[0]:
            raise ContractViolation(f"index {index[m]} out of range for mode {m}")
        acc = acc * U[index[m], :]
    return float(acc.sum())


def _model_cross_terms(X: SparseTensor4, factors, norms):
    """Return (<X, model>, ||model||^2, per-nonzero model values)."""
    norms = np.asarray(norms, dtype=np.float64)
    rank = factors[0].shape[1]
    if X.nnz:
        rows = np.ones((X.nnz, rank))
        for m in range(4):
            rows = rows * factors[m][X.indices[:, m], :]
        model_at_nz = rows @ norms
        inner = float(np.dot(X.values, model_at_nz))
    else:
        model_at_nz = np.zeros(0)
        inner = 0.0
    gram = np.ones((rank, rank))
    for U in factors:
        gram *= U.T @ U
    model_sq = float(norms @ gram @ norms)
    return inner, model_sq, model_at_nz


def residual_norm(X: SparseTensor4, factors, norms) -> float:
    """Frobenius norm of (tensor - model) over the full index space.

    Split into an exact sum over stored cells plus the model energy on the
    complement, so an exact fit on a fully stored tensor reports zero
    instead of the cancellation noise of the naive three-term expansion.
    """
    factors = _check_factors(X, factors)
    inner, model_sq, model_at_nz = _model_cross_terms(X, factors, norms)
    on_nz = float(np.sum((X.values - model_at_nz) ** 2))
    total_cells = int(np.prod(np.asarray(X.dims, dtype=np.int64)))
    if X.nnz == total_cells:
        complement = 0.0
    else:
        complement = max(model_sq - float(np.dot(model_at_nz, model_at_nz)), 0.0)
    return float(np.sqrt(on_nz + complement))
