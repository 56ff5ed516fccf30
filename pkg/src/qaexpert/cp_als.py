"""Regularized CP decomposition of the evidence tensor via alternating least squares.

Each sweep solves the four ridge-regularized normal-equation systems in
mode order.  Between sweeps the component scales are rebalanced evenly
across modes; for the plain ridge objective that rebalancing is itself a
descent step (it minimizes the ridge over the scale-equivalent models), so
the recorded objective history is non-increasing.  When a hierarchy
penalty is attached to the question mode, factors are kept raw during the
iteration and the per-row ridge weights absorb the penalty exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, SolverDiverged
from .hierarchy import TreePenalty, weight_penalty
from .sparse_tensor import SparseTensor4, gram_hadamard, mttkrp, residual_norm

__all__ = ["AlsConfig", "CpModel", "tensor_objective", "cp_als", "fit_metric"]


@dataclass(frozen=True)
class AlsConfig:
    """Solver settings for :func:`cp_als`.

    ``fit_tolerance`` stops the loop once the fit metric improves by less
    than this amount between sweeps.
    """

    rank: int
    max_iters: int = 200
    fit_tolerance: float = 1e-6
    lambda_x: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractViolation("rank must be >= 1")
        if self.max_iters < 1:
            raise ContractViolation("max_iters must be >= 1")
        if self.lambda_x < 0:
            raise ContractViolation("lambda_x must be >= 0")
        if self.fit_tolerance < 0:
            raise ContractViolation("fit_tolerance must be >= 0")


@dataclass
class CpModel:
    """Fitted CP model: unit-column factors, component scales, objective trace.

    ``factors[m][:, r]`` has unit Euclidean norm (zero for dead components)
    and ``norms[r]`` carries the component's full scale, so the model value
    at a cell is ``sum_r norms[r] * prod_m factors[m][i_m, r]``.
    """

    factors: list[np.ndarray]
    norms: np.ndarray
    fit_history: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(self.norms.shape[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(U.shape[0] for U in self.factors)

    def balanced_factors(self) -> list[np.ndarray]:
        """Factors with each component's scale spread evenly over the modes."""
        spread = self.norms ** 0.25
        return [U * spread for U in self.factors]


def _normalize_columns(factors):
    """Pull column norms out of the factors; dead components become all-zero."""
    norms_per_mode = np.stack([np.linalg.norm(U, axis=0) for U in factors])
    lam = np.prod(norms_per_mode, axis=0)
    out = []
    for U, col_norms in zip(factors, norms_per_mode):
        scale = np.divide(1.0, col_norms, out=np.zeros_like(col_norms), where=col_norms > 0)
        out.append(U * scale)
    dead = lam == 0
    if np.any(dead):
        for U in out:
            U[:, dead] = 0.0
    return out, lam


def _balance_columns(factors):
    """Rescale so every mode carries the same per-component column norm."""
    normalized, lam = _normalize_columns(factors)
    spread = lam ** 0.25
    return [U * spread for U in normalized]


def tensor_objective(X: SparseTensor4, model: CpModel, lambda_x: float) -> float:
    """Half squared reconstruction error plus the ridge on the factors.

    The ridge is evaluated on the balanced representation (scale spread
    evenly across modes), the minimal-ridge member of the model's
    rescaling class; this makes the value well defined for a model stored
    as unit columns plus scales.
    """
    res = residual_norm(X, model.factors, model.norms)
    ridge = sum(float(np.sum(U * U)) for U in model.balanced_factors())
    return 0.5 * res * res + 0.5 * lambda_x * ridge


def fit_metric(X: SparseTensor4, model: CpModel) -> float:
    """1 minus the relative residual; 1.0 for an exact fit of a zero tensor."""
    res = residual_norm(X, model.factors, model.norms)
    norm_x = X.norm()
    if norm_x == 0:
        return 1.0 if res == 0 else float("-inf")
    return min(1.0 - res / norm_x, 1.0)


def _ridge_solve(V, rhs, reg):
    """Solve ``rows @ (V + reg*I) = rhs``; pseudo-inverse when unregularized."""
    r = V.shape[0]
    if reg > 0:
        A = V + reg * np.eye(r)
        try:
            return np.linalg.solve(A, rhs.T).T
        except np.linalg.LinAlgError:
            pass
    else:
        A = V
    return rhs @ np.linalg.pinv(A, hermitian=True)


def _rowwise_ridge_solve(V, rhs, regs):
    """Per-row ridge solve, batching rows that share a regularizer weight."""
    out = np.empty_like(rhs)
    for reg in np.unique(regs):
        rows = np.flatnonzero(regs == reg)
        out[rows] = _ridge_solve(V, rhs[rows], float(reg))
    return out


def _working_objective(X, factors, lambda_x, penalty):
    ones = np.ones(factors[0].shape[1])
    res = residual_norm(X, factors, ones)
    ridge = sum(float(np.sum(U * U)) for U in factors)
    value = 0.5 * res * res + 0.5 * lambda_x * ridge
    if penalty is not None:
        value += weight_penalty(factors[0], penalty)
    return value


def cp_als(
    X: SparseTensor4,
    config: AlsConfig,
    tree_penalty: TreePenalty | None = None,
) -> CpModel:
    """Fit a rank-``config.rank`` CP model to a sparse 4-mode tensor.

    Parameters
    ----------
    X : SparseTensor4
    config : AlsConfig
    tree_penalty : TreePenalty, optional
        Hierarchy-weighted squared-norm penalty on the question-mode rows.
        Its leaves must index exactly the mode-0 rows of ``X``.

    Returns
    -------
    CpModel
        Unit-column factors with scales in ``norms``; ``fit_history`` holds
        the objective after every sweep (the tree term included when a
        penalty is attached).

    Raises
    ------
    SolverDiverged
        If the objective turns non-finite; the last finite model is
        attached to the exception.
    """
    if tree_penalty is not None and tree_penalty.tree.n_rows != X.dims[0]:
        raise ContractViolation(
            f"penalty covers {tree_penalty.tree.n_rows} rows, tensor mode 0 has {X.dims[0]}"
        )
    if config.rank > min(X.dims):
        warnings.warn(
            f"rank {config.rank} exceeds the smallest tensor dimension {min(X.dims)}; "
            "components cannot all be independent",
            RuntimeWarning,
            stacklevel=2,
        )

    rng = np.random.default_rng(config.seed)
    factors = [rng.random((d, config.rank)) for d in X.dims]
    row_regs = None
    if tree_penalty is not None:
        row_regs = config.lambda_x + tree_penalty.lambda_w * tree_penalty.row_weights

    history: list[float] = []
    fit_prev = float("-inf")
    last_finite = None
    for _ in range(config.max_iters):
        for mode in range(4):
            V = gram_hadamard(factors, mode)
            rhs = mttkrp(X, factors, mode)
            if mode == 0 and row_regs is not None:
                factors[0] = _rowwise_ridge_solve(V, rhs, row_regs)
            else:
                factors[mode] = _ridge_solve(V, rhs, config.lambda_x)
        if tree_penalty is None:
            factors = _balance_columns(factors)
        objective = _working_objective(X, factors, config.lambda_x, tree_penalty)
        if not np.isfinite(objective):
            raise SolverDiverged("objective became non-finite", last_state=last_finite)
        history.append(objective)
        normalized, lam = _normalize_columns(factors)
        last_finite = CpModel(normalized, lam, list(history))
        fit = fit_metric(X, last_finite)
        if abs(fit - fit_prev) < config.fit_tolerance:
            break
        fit_prev = fit
    return last_finite
