"""Joint factorization: evidence tensor coupled with two membership matrices.

The subsite×answerer matrix M and topic×answerer matrix N are factorized
with a shared answerer factor A, and the subsite factor S is pulled toward
the average question-factor row of each subsite's question group.  All
blocks have closed-form ridge updates, so block coordinate descent
decreases the joint objective monotonically.

Zeros in M and N are observed zeros: the losses are full-matrix Frobenius
norms, evaluated without densifying via the Gram identity
``||F G^T||^2 = trace((F^T F)(G^T G))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cp_als import CpModel, _normalize_columns, _ridge_solve, tensor_objective
from .errors import ContractViolation, DegenerateGroupError, SolverDiverged
from .hierarchy import HierarchyTree, TreePenalty, weight_penalty
from .sparse_tensor import SparseTensor4, gram_hadamard, mttkrp, residual_norm

__all__ = [
    "MembershipMatrix",
    "JointConfig",
    "JointModel",
    "networks_objective",
    "topic_objective",
    "site_regularizer",
    "joint_objective",
    "fit_joint",
]


@dataclass(frozen=True)
class MembershipMatrix:
    """Binary sparse matrix: entry (r, c) is 1 when the pair was observed.

    Duplicate pairs collapse to a single entry (presence, not counts).
    """

    rows: int
    cols: int
    indices: np.ndarray

    def __init__(self, rows: int, cols: int, pairs):
        if rows < 0 or cols < 0:
            raise ContractViolation("matrix dimensions must be nonnegative")
        idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if idx.size:
            if idx.min() < 0 or idx[:, 0].max() >= rows or idx[:, 1].max() >= cols:
                raise ContractViolation("membership pair out of bounds")
            order = np.lexsort((idx[:, 1], idx[:, 0]))
            idx = idx[order]
            keep = np.ones(len(idx), dtype=bool)
            keep[1:] = np.any(idx[1:] != idx[:-1], axis=1)
            idx = idx[keep]
        idx.setflags(write=False)
        object.__setattr__(self, "rows", int(rows))
        object.__setattr__(self, "cols", int(cols))
        object.__setattr__(self, "indices", idx)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.rows, self.cols))
        dense[self.indices[:, 0], self.indices[:, 1]] = 1.0
        return dense

    def matmul(self, F: np.ndarray) -> np.ndarray:
        """Dense product ``M @ F`` accumulated over the stored pairs."""
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        if F.shape[0] != self.cols:
            raise ContractViolation(f"operand has {F.shape[0]} rows, need {self.cols}")
        out = np.zeros((self.rows, F.shape[1]))
        np.add.at(out, self.indices[:, 0], F[self.indices[:, 1]])
        return out

    def tmatmul(self, F: np.ndarray) -> np.ndarray:
        """Dense product ``M.T @ F``."""
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        if F.shape[0] != self.rows:
            raise ContractViolation(f"operand has {F.shape[0]} rows, need {self.rows}")
        out = np.zeros((self.cols, F.shape[1]))
        np.add.at(out, self.indices[:, 1], F[self.indices[:, 0]])
        return out


def _half_sq_frobenius(M: MembershipMatrix, F: np.ndarray, G: np.ndarray) -> float:
    """Half of ||M - F G^T||_F^2 over the full (dense) index space.

    Split into the exact sum over observed ones plus the model's energy on
    the zero cells; the latter is clamped at zero because it is computed
    as a difference of two Gram totals.
    """
    pred = np.sum(F[M.indices[:, 0]] * G[M.indices[:, 1]], axis=1)
    on_ones = float(np.sum((1.0 - pred) ** 2))
    total_energy = float(np.sum((F.T @ F) * (G.T @ G)))
    off = max(total_energy - float(np.dot(pred, pred)), 0.0)
    if M.nnz == M.rows * M.cols:
        off = 0.0
    return 0.5 * (on_ones + off)


def _check_pair_shapes(F, G, M, f_name, m_name):
    if F.ndim != 2 or G.ndim != 2 or F.shape[1] != G.shape[1]:
        raise ContractViolation(f"{f_name} and answerer factor must share the rank")
    if F.shape[0] != M.rows or G.shape[0] != M.cols:
        raise ContractViolation(
            f"{f_name} {F.shape} and answerer factor {G.shape} do not match "
            f"{m_name} with shape ({M.rows}, {M.cols})"
        )


def networks_objective(S: np.ndarray, A: np.ndarray, M: MembershipMatrix, lambda_s: float) -> float:
    """Subsite-membership loss: ½||M − SAᵀ||² + (λ_s/2)(||S||² + ||A||²)."""
    S = np.asarray(S, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check_pair_shapes(S, A, M, "subsite factor", "subsite membership")
    ridge = float(np.sum(S * S) + np.sum(A * A))
    return _half_sq_frobenius(M, S, A) + 0.5 * lambda_s * ridge


def topic_objective(T: np.ndarray, A: np.ndarray, N: MembershipMatrix, lambda_t: float) -> float:
    """Topic-membership loss: ½||N − TAᵀ||² + (λ_t/2)(||T||² + ||A||²)."""
    T = np.asarray(T, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check_pair_shapes(T, A, N, "topic factor", "topic membership")
    ridge = float(np.sum(T * T) + np.sum(A * A))
    return _half_sq_frobenius(N, T, A) + 0.5 * lambda_t * ridge


def _subsite_groups(tree: HierarchyTree) -> list[list[int]]:
    groups = [sorted(g) for g in tree.level_groups(1)]
    for rows in groups:
        if not rows:
            raise DegenerateGroupError("a subsite group has no questions")
    return groups


def group_means(U1: np.ndarray, tree: HierarchyTree) -> np.ndarray:
    """Per-subsite mean of the question-factor rows, in subsite node order."""
    U1 = np.asarray(U1, dtype=np.float64)
    groups = _subsite_groups(tree)
    out = np.empty((len(groups), U1.shape[1]))
    for j, rows in enumerate(groups):
        out[j] = U1[rows].mean(axis=0)
    return out


def site_regularizer(S: np.ndarray, U1: np.ndarray, tree: HierarchyTree, lambda_site: float) -> float:
    """Half the summed squared distance of subsite rows to their group means."""
    S = np.asarray(S, dtype=np.float64)
    U1 = np.asarray(U1, dtype=np.float64)
    if U1.shape[0] != tree.n_rows:
        raise ContractViolation(
            f"question factor has {U1.shape[0]} rows, tree covers {tree.n_rows}"
        )
    mu = group_means(U1, tree)
    if S.shape != mu.shape:
        raise ContractViolation(
            f"subsite factor {S.shape} does not match {mu.shape[0]} subsite groups"
        )
    return 0.5 * lambda_site * float(np.sum((S - mu) ** 2))


@dataclass(frozen=True)
class JointConfig:
    """Settings for :func:`fit_joint`.

    ``lambda_site`` weights the subsite-to-question-mean coupling and
    defaults to ``lambda_s`` when left unset, matching the shared symbol
    in the objective.  ``tolerance`` is relative objective improvement.
    """

    rank: int
    max_iters: int = 100
    tolerance: float = 1e-6
    lambda_x: float = 0.1
    lambda_w: float = 0.1
    lambda_s: float = 0.1
    lambda_t: float = 0.1
    lambda_site: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractViolation("rank must be >= 1")
        if self.max_iters < 1:
            raise ContractViolation("max_iters must be >= 1")
        if self.tolerance < 0:
            raise ContractViolation("tolerance must be >= 0")
        for name in ("lambda_x", "lambda_w", "lambda_s", "lambda_t"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be >= 0")
        if self.lambda_site is not None and self.lambda_site < 0:
            raise ContractViolation("lambda_site must be >= 0")

    @property
    def effective_lambda_site(self) -> float:
        return self.lambda_s if self.lambda_site is None else self.lambda_site


@dataclass
class JointModel:
    """Fitted joint model: CP part plus subsite, answerer, and topic factors.

    ``objective_history`` holds the joint objective after every full block
    sweep; ``block_history`` holds (block name, objective) after each
    individual block update.  Both are evaluated on the raw iterates; the
    stored factors are canonicalized afterwards, with S, A, T re-solved
    once against the canonical question factor.
    """

    cp: CpModel
    S: np.ndarray
    A: np.ndarray
    T: np.ndarray
    lambdas: dict[str, float]
    objective_history: list[float] = field(default_factory=list)
    block_history: list[tuple[str, float]] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.cp.rank


def joint_objective(
    X: SparseTensor4,
    M: MembershipMatrix,
    N: MembershipMatrix,
    model: JointModel,
    penalty: TreePenalty,
) -> float:
    """Sum of the five objective components for a stored model.

    Evaluated on the balanced factor representation, the same one the
    component operations see individually, so this equals their sum
    exactly.
    """
    lam = model.lambdas
    balanced = model.cp.balanced_factors()
    value = tensor_objective(X, model.cp, lam["lambda_x"])
    value += weight_penalty(balanced[0], penalty)
    value += networks_objective(model.S, model.A, M, lam["lambda_s"])
    value += topic_objective(model.T, model.A, N, lam["lambda_t"])
    value += site_regularizer(model.S, balanced[0], penalty.tree, lam["lambda_site"])
    return value


def _sym_inv(K: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(K)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(K, hermitian=True)


def _solve_question_block(rhs, V, row_regs, groups, S, lam_site):
    """Exact minimizer of the joint objective over all question rows.

    Within subsite group j of size n, every row l satisfies
    ``row_l (V + reg_l I) + (lam_site/n²) Σ_{l'} row_{l'} = rhs_l + (lam_site/n) S_j``;
    summing over the group gives a small linear system for the row total,
    after which each row follows in closed form.
    """
    R = V.shape[0]
    eye = np.eye(R)
    inv_by_reg = {float(reg): _sym_inv(V + float(reg) * eye) for reg in np.unique(row_regs)}
    out = np.empty_like(rhs)
    if lam_site == 0 or not groups:
        for reg, inv in inv_by_reg.items():
            rows = np.flatnonzero(row_regs == reg)
            out[rows] = rhs[rows] @ inv
        return out
    for j, rows in enumerate(groups):
        n = len(rows)
        c = lam_site / n**2
        B = rhs[rows] + (lam_site / n) * S[j]
        Dinv = np.stack([inv_by_reg[float(row_regs[l])] for l in rows])
        BD = np.einsum("ir,irs->is", B, Dinv)
        total = np.linalg.solve((eye + c * Dinv.sum(axis=0)).T, BD.sum(axis=0))
        out[rows] = np.einsum("ir,irs->is", B - c * total, Dinv)
    return out


def _working_joint_objective(X, M, N, factors, S, A, T, penalty, groups, cfg, lam_site):
    ones = np.ones(factors[0].shape[1])
    res = residual_norm(X, factors, ones)
    value = 0.5 * res * res
    value += 0.5 * cfg.lambda_x * sum(float(np.sum(U * U)) for U in factors)
    value += weight_penalty(factors[0], penalty)
    value += networks_objective(S, A, M, cfg.lambda_s)
    value += topic_objective(T, A, N, cfg.lambda_t)
    mu = np.stack([factors[0][rows].mean(axis=0) for rows in groups]) if groups else S
    value += 0.5 * lam_site * float(np.sum((S - mu) ** 2))
    return value


def fit_joint(
    X: SparseTensor4,
    M: MembershipMatrix,
    N: MembershipMatrix,
    tree: HierarchyTree,
    config: JointConfig,
) -> JointModel:
    """Fit the coupled model by block coordinate descent.

    Block order per sweep: question, topic, voting, expert tensor modes,
    then subsite factor S, shared answerer factor A, topic factor T.
    Every update is the exact minimizer of the joint objective in its
    block, so the recorded histories are non-increasing.  The loop stops
    once relative objective improvement falls below ``config.tolerance``
    or after ``config.max_iters`` sweeps.

    Raises
    ------
    SolverDiverged
        If the objective turns non-finite; carries the last finite model
        (pre-canonicalization) as ``last_state``.
    """
    groups = _subsite_groups(tree)
    if tree.n_rows != X.dims[0]:
        raise ContractViolation(f"tree covers {tree.n_rows} rows, tensor mode 0 has {X.dims[0]}")
    if N.rows != X.dims[1]:
        raise ContractViolation(f"topic membership has {N.rows} rows, tensor mode 1 has {X.dims[1]}")
    if M.cols != X.dims[3] or N.cols != X.dims[3]:
        raise ContractViolation("membership columns must match the expert mode size")
    if M.rows != len(groups):
        raise ContractViolation(
            f"subsite membership has {M.rows} rows but the tree has {len(groups)} subsite groups"
        )

    lam_site = config.effective_lambda_site
    lambdas = {
        "lambda_x": config.lambda_x,
        "lambda_w": config.lambda_w,
        "lambda_s": config.lambda_s,
        "lambda_t": config.lambda_t,
        "lambda_site": lam_site,
    }
    penalty = TreePenalty(tree, config.lambda_w)
    R = config.rank
    eye = np.eye(R)

    if X.nnz == 0 and M.nnz == 0 and N.nnz == 0:
        # The zero model is a global minimizer: every term is nonnegative
        # and each vanishes there.
        cp = CpModel([np.zeros((d, R)) for d in X.dims], np.zeros(R))
        zero = np.zeros
        return JointModel(
            cp, zero((M.rows, R)), zero((M.cols, R)), zero((N.rows, R)),
            lambdas, [0.0], [],
        )

    rng = np.random.default_rng(config.seed)
    factors = [rng.random((d, R)) for d in X.dims]
    S = rng.random((M.rows, R))
    A = rng.random((M.cols, R))
    T = rng.random((N.rows, R))
    row_regs = config.lambda_x + config.lambda_w * penalty.row_weights

    def objective():
        return _working_joint_objective(
            X, M, N, factors, S, A, T, penalty, groups, config, lam_site
        )

    history: list[float] = []
    blocks: list[tuple[str, float]] = []
    last_finite = None
    prev = None
    for _ in range(config.max_iters):
        V = gram_hadamard(factors, 0)
        factors[0] = _solve_question_block(
            mttkrp(X, factors, 0), V, row_regs, groups, S, lam_site
        )
        blocks.append(("question", objective()))
        for mode in range(1, 4):
            V = gram_hadamard(factors, mode)
            factors[mode] = _ridge_solve(V, mttkrp(X, factors, mode), config.lambda_x)
            blocks.append((("topic", "voting", "expert")[mode - 1], objective()))
        if groups:
            mu = np.stack([factors[0][rows].mean(axis=0) for rows in groups])
        else:
            mu = np.zeros((0, R))
        S = _ridge_solve(A.T @ A, M.matmul(A) + lam_site * mu, config.lambda_s + lam_site)
        blocks.append(("subsite", objective()))
        A = _ridge_solve(
            S.T @ S + T.T @ T, M.tmatmul(S) + N.tmatmul(T), config.lambda_s + config.lambda_t
        )
        blocks.append(("answerer", objective()))
        T = _ridge_solve(A.T @ A, N.matmul(A), config.lambda_t)
        blocks.append(("topicfactor", objective()))

        value = blocks[-1][1]
        if not np.isfinite(value):
            raise SolverDiverged("joint objective became non-finite", last_state=last_finite)
        history.append(value)
        normalized, lam = _normalize_columns([U.copy() for U in factors])
        last_finite = JointModel(
            CpModel(normalized, lam), S.copy(), A.copy(), T.copy(),
            dict(lambdas), list(history), list(blocks),
        )
        if prev is not None and (prev - value) < config.tolerance * max(abs(prev), 1e-300):
            break
        prev = value

    # Canonicalize: unit-column factors with scales in norms, then re-solve
    # S, A, T once against the balanced question factor so the stored model
    # is internally consistent under joint_objective.
    normalized, lam = _normalize_columns(factors)
    cp = CpModel(normalized, lam)
    mu = group_means(cp.balanced_factors()[0], tree)
    S = _ridge_solve(A.T @ A, M.matmul(A) + lam_site * mu, config.lambda_s + lam_site)
    A = _ridge_solve(
        S.T @ S + T.T @ T, M.tmatmul(S) + N.tmatmul(T), config.lambda_s + config.lambda_t
    )
    T = _ridge_solve(A.T @ A, N.matmul(A), config.lambda_t)
    return JointModel(cp, S, A, T, lambdas, history, blocks)
