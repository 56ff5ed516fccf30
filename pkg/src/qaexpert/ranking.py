"""Topic-conditioned expert ranking and its evaluation against reputation.

Rankings are total orders: score descending, ties broken by ascending
user identifier, so equal inputs always produce identical output files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .ingest import QaDataset, ReputationLedger

__all__ = [
    "RankedList",
    "EvalReport",
    "rank_experts",
    "z_score",
    "baseline_rank",
    "precision_at_k",
    "mean_reciprocal_rank",
    "evaluate",
]


@dataclass(frozen=True)
class RankedList:
    """Ordered (user, score) pairs for one topic.

    ``status`` is "ok" normally and "no-signal" when the topic's factor
    row is all zeros, in which case ``entries`` is empty.
    """

    topic: object
    entries: tuple
    status: str = "ok"

    def users(self) -> list:
        return [u for u, _ in self.entries]


def _order_scores(user_ids, scores):
    order = np.lexsort((np.asarray(user_ids), -np.asarray(scores, dtype=np.float64)))
    return order


def rank_experts(model, topic: int, k: int) -> RankedList:
    """Top-k experts for a topic from the fitted tensor factors.

    A user's score contracts the stored component scales with the topic's
    factor row and the user's factor row; question and voting modes are
    already absorbed into the scales.  Returns at most k entries, fewer
    when the expert mode is smaller than k.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    cp = model.cp if hasattr(model, "cp") else model
    topic_factor = cp.factors[1]
    expert_factor = cp.factors[3]
    if not 0 <= topic < topic_factor.shape[0]:
        raise ContractViolation(f"topic {topic} out of range")
    row = topic_factor[topic]
    if not row.any():
        return RankedList(topic, (), status="no-signal")
    scores = expert_factor @ (cp.norms * row)
    order = _order_scores(np.arange(scores.shape[0]), scores)[:k]
    entries = tuple((int(l), float(scores[l])) for l in order)
    return RankedList(topic, entries)


def z_score(a: int, q: int) -> float:
    """Answer/question balance statistic: (a - q) / sqrt(a + q), 0 at 0/0."""
    if a < 0 or q < 0:
        raise ContractViolation("counts must be nonnegative")
    if a == 0 and q == 0:
        return 0.0
    return (a - q) / math.sqrt(a + q)


def _accepted_answer_keys(data: QaDataset) -> set:
    keys = set()
    for post in data.posts:
        if post.kind == "question" and post.accepted_id is not None:
            keys.add((post.subsite, post.accepted_id))
    for vote in data.votes:
        if vote.kind == "accept" and data.post(vote.subsite, vote.post_id).kind == "answer":
            keys.add((vote.subsite, vote.post_id))
    return keys


def baseline_rank(data: QaDataset, topic: str, kind: str, k: int) -> RankedList:
    """Rank a topic's answerers by a per-user activity statistic.

    ``kind`` is one of best_answer_ratio (accepted answers over answers),
    num_answers, or z_score (answers posted versus own questions asked).
    Candidates are the users with at least one answer under the topic.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if kind not in ("best_answer_ratio", "num_answers", "z_score"):
        raise ContractViolation(f"unknown baseline kind {kind!r}")
    users = set(data.users)
    tagged = {
        (p.subsite, p.post_id): p for p in data.posts
        if p.kind == "question" and topic in p.tags
    }
    accepted = _accepted_answer_keys(data)
    answers: dict[int, int] = {}
    accepted_by: dict[int, int] = {}
    questions_by: dict[int, int] = {}
    for post in data.posts:
        if post.kind == "answer" and post.owner in users:
            if (post.subsite, post.parent_id) in tagged:
                answers[post.owner] = answers.get(post.owner, 0) + 1
                if (post.subsite, post.post_id) in accepted:
                    accepted_by[post.owner] = accepted_by.get(post.owner, 0) + 1
        elif post.kind == "question" and post.owner in users:
            if (post.subsite, post.post_id) in tagged:
                questions_by[post.owner] = questions_by.get(post.owner, 0) + 1

    candidates = sorted(answers)
    if not candidates:
        return RankedList(topic, ())
    if kind == "num_answers":
        scores = [float(answers[u]) for u in candidates]
    elif kind == "best_answer_ratio":
        scores = [accepted_by.get(u, 0) / answers[u] for u in candidates]
    else:
        scores = [z_score(answers[u], questions_by.get(u, 0)) for u in candidates]
    order = _order_scores(candidates, scores)[:k]
    entries = tuple((candidates[i], float(scores[i])) for i in order)
    return RankedList(topic, entries)


def precision_at_k(recommended: RankedList, relevant: set, k: int) -> float:
    """Fraction of the top-k recommendations that are relevant.

    The denominator is min(k, list length) so short lists are not
    penalized for missing padding; an empty list scores 0.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if not recommended.entries:
        return 0.0
    top = [u for u, _ in recommended.entries[:k]]
    hits = sum(1 for u in top if u in relevant)
    return hits / min(k, len(recommended.entries))


def mean_reciprocal_rank(per_query_ranks) -> float:
    """Mean of 1/rank over queries; ranks are 1-based positions."""
    ranks = list(per_query_ranks)
    if not ranks:
        raise ContractViolation("rank list must be nonempty")
    if any(r < 1 for r in ranks):
        raise ContractViolation("ranks must be >= 1")
    return sum(1.0 / r for r in ranks) / len(ranks)


@dataclass
class EvalReport:
    """Per-topic and aggregate ranking quality against the ledger.

    ``rows`` holds (topic, k, precision, reciprocal rank, list length)
    per evaluated topic and k; ``summary`` holds one ALL row per k with
    means over evaluated topics and the evaluated-topic count.
    """

    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    evaluated_topics: int = 0
    skipped_topics: int = 0


def evaluate(model, data: QaDataset, ledger: ReputationLedger, k_list, tables=None) -> EvalReport:
    """Score the model's per-topic rankings against reputation ground truth.

    For each topic with ledger entries: precision@k against the ledger's
    top-k users (ties by ascending id), and the reciprocal of the
    position at which the model ranks the ledger's top user (0 when the
    model gives the topic no ranking).  Topics absent from the ledger are
    skipped and counted.
    """
    k_list = [int(k) for k in k_list]
    if not k_list or any(k < 1 for k in k_list):
        raise ContractViolation("k_list must be nonempty positive integers")
    if tables is not None:
        topics, users = tuple(tables.topics), tuple(tables.users)
    else:
        topics = tuple(sorted({
            t for p in data.posts if p.kind == "question" for t in p.tags
        }))
        users = tuple(data.users)
    cp = model.cp if hasattr(model, "cp") else model
    if cp.factors[1].shape[0] != len(topics) or cp.factors[3].shape[0] != len(users):
        raise ContractViolation(
            "model factor sizes do not match the dataset's topic/user tables"
        )

    report = EvalReport()
    per_k_precision = {k: [] for k in k_list}
    reciprocals = []
    for j, tag in enumerate(topics):
        ledger_order = ledger.top_users(tag)
        if not ledger_order:
            report.skipped_topics += 1
            continue
        ranked = rank_experts(model, j, k=len(users)) if users else RankedList(j, ())
        mapped = RankedList(
            tag,
            tuple((users[l], score) for l, score in ranked.entries),
            ranked.status,
        )
        target = ledger_order[0]
        position = None
        for pos, (uid, _) in enumerate(mapped.entries, start=1):
            if uid == target:
                position = pos
                break
        reciprocal = 1.0 / position if position is not None else 0.0
        reciprocals.append(reciprocal)
        for k in k_list:
            prec = precision_at_k(mapped, set(ledger_order[:k]), k)
            per_k_precision[k].append(prec)
            report.rows.append((tag, k, prec, reciprocal, len(mapped.entries)))
        report.evaluated_topics += 1

    if report.evaluated_topics:
        for k in k_list:
            report.summary.append((
                "ALL",
                k,
                sum(per_k_precision[k]) / len(per_k_precision[k]),
                sum(reciprocals) / len(reciprocals),
                report.evaluated_topics,
            ))
    return report
