"""Parse Q&A dump files and assemble model inputs.

A dump is a directory per subsite holding ``Posts.xml``, ``Votes.xml``,
and ``Users.xml``, each a flat sequence of ``<row .../>`` records.  Users
are identified network-wide by their account id when the dump provides
one, falling back to the per-site id otherwise.  Question tags are
namespaced ``subsite/tag`` so topics from different subsites never
collide.
"""

from __future__ import annotations

import warnings
import xml.sax
from bisect import bisect_right
from dataclasses import dataclass
from xml.sax.handler import ContentHandler

import numpy as np

from .coupled import MembershipMatrix
from .errors import DataError, DumpParseError, EmptyInputError
from .hierarchy import HierarchyTree, tree_from_nested
from .sparse_tensor import SparseTensor4

__all__ = [
    "Post",
    "Vote",
    "QaDataset",
    "ReputationLedger",
    "BuildInputs",
    "parse_dump",
    "merge_datasets",
    "sample_dataset",
    "reputation_scores",
    "build_inputs",
    "DEFAULT_BUCKET_EDGES",
]

DEFAULT_BUCKET_EDGES = (0, 1, 3, 10)

_VOTE_KINDS = {"1": "accept", "2": "upvote", "3": "downvote"}


@dataclass(frozen=True)
class Post:
    post_id: int
    subsite: str
    kind: str
    owner: int | None = None
    parent_id: int | None = None
    accepted_id: int | None = None
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Vote:
    subsite: str
    post_id: int
    kind: str
    voter: int | None = None


class QaDataset:
    """Normalized posts, votes, and users for one or more subsites.

    ``users`` holds sorted network-wide user ids; posts are sorted by
    (subsite, post id); votes by (subsite, post id, kind, voter).
    Construction validates referential integrity: answers need existing
    question parents, accepted ids must name answers of their question,
    tags appear on questions only, and votes point at existing posts.
    """

    def __init__(self, users, posts, votes):
        self.users = tuple(sorted(set(int(u) for u in users)))
        self.posts = tuple(sorted(posts, key=lambda p: (p.subsite, p.post_id)))
        self.votes = tuple(
            sorted(votes, key=lambda v: (v.subsite, v.post_id, v.kind, v.voter or 0))
        )
        self._by_key = {}
        for post in self.posts:
            key = (post.subsite, post.post_id)
            if key in self._by_key:
                raise DataError(f"duplicate post id {post.post_id} in subsite {post.subsite}")
            self._by_key[key] = post
        self._validate()

    def _validate(self):
        for post in self.posts:
            if post.kind == "answer":
                if post.tags:
                    raise DataError(f"answer {post.post_id} carries tags")
                parent = self._by_key.get((post.subsite, post.parent_id))
                if parent is None or parent.kind != "question":
                    raise DataError(
                        f"answer {post.post_id} in subsite {post.subsite} "
                        f"references missing question {post.parent_id}"
                    )
            elif post.kind == "question":
                if post.accepted_id is not None:
                    acc = self._by_key.get((post.subsite, post.accepted_id))
                    if acc is None or acc.kind != "answer" or acc.parent_id != post.post_id:
                        raise DataError(
                            f"question {post.post_id} accepts {post.accepted_id}, "
                            "which is not one of its answers"
                        )
            else:
                raise DataError(f"post {post.post_id} has unknown kind {post.kind!r}")
        for vote in self.votes:
            if (vote.subsite, vote.post_id) not in self._by_key:
                raise DataError(
                    f"vote on missing post {vote.post_id} in subsite {vote.subsite}"
                )

    def post(self, subsite: str, post_id: int) -> Post:
        return self._by_key[(subsite, post_id)]

    @property
    def subsites(self) -> tuple[str, ...]:
        return tuple(sorted({p.subsite for p in self.posts}))

    def questions(self):
        return [p for p in self.posts if p.kind == "question"]

    def answers(self):
        return [p for p in self.posts if p.kind == "answer"]

    def governing_question(self, post: Post) -> Post:
        """The question a post hangs off: itself, or an answer's parent."""
        if post.kind == "question":
            return post
        return self._by_key[(post.subsite, post.parent_id)]


class _RowCollector(ContentHandler):
    def __init__(self):
        super().__init__()
        self.rows = []
        self._locator = None

    def setDocumentLocator(self, locator):
        self._locator = locator

    def startElement(self, name, attrs):
        if name == "row":
            line = self._locator.getLineNumber() if self._locator else None
            self.rows.append((line, dict(attrs)))


def _iter_rows(path):
    handler = _RowCollector()
    try:
        xml.sax.parse(str(path), handler)
    except xml.sax.SAXParseException as exc:
        raise DumpParseError(
            exc.getMessage(), path=str(path), line=exc.getLineNumber()
        ) from exc
    return handler.rows


def _attr_int(attrs, name, path, line):
    raw = attrs.get(name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise DumpParseError(f"attribute {name}={raw!r} is not an integer", path, line)


def _parse_tags(raw, subsite):
    if not raw:
        return ()
    if raw.startswith("<"):
        parts = raw.strip("<>").split("><")
    else:
        parts = [t for t in raw.split("|") if t]
    return tuple(f"{subsite}/{t}" for t in parts if t)


def parse_dump(posts_file, votes_file, users_file, subsite_name: str) -> QaDataset:
    """Parse one subsite's dump files into a validated dataset.

    Unknown vote kinds and non-question/answer post kinds are skipped
    with a counted warning.  Posts whose owner cannot be resolved against
    the users file are kept with no owner.
    """
    local_to_canonical = {}
    users = []
    for line, attrs in _iter_rows(users_file):
        local = _attr_int(attrs, "Id", users_file, line)
        if local is None:
            raise DumpParseError("user row lacks Id", users_file, line)
        if local in local_to_canonical:
            raise DataError(f"duplicate user id {local} in {users_file}")
        account = _attr_int(attrs, "AccountId", users_file, line)
        canonical = account if account is not None else local
        local_to_canonical[local] = canonical
        users.append(canonical)

    def resolve(local_id):
        if local_id is None:
            return None
        return local_to_canonical.get(local_id)

    posts = []
    skipped_posts = 0
    for line, attrs in _iter_rows(posts_file):
        pid = _attr_int(attrs, "Id", posts_file, line)
        if pid is None:
            raise DumpParseError("post row lacks Id", posts_file, line)
        kind_code = attrs.get("PostTypeId")
        owner = resolve(_attr_int(attrs, "OwnerUserId", posts_file, line))
        if kind_code == "1":
            posts.append(Post(
                post_id=pid,
                subsite=subsite_name,
                kind="question",
                owner=owner,
                accepted_id=_attr_int(attrs, "AcceptedAnswerId", posts_file, line),
                tags=_parse_tags(attrs.get("Tags"), subsite_name),
            ))
        elif kind_code == "2":
            posts.append(Post(
                post_id=pid,
                subsite=subsite_name,
                kind="answer",
                owner=owner,
                parent_id=_attr_int(attrs, "ParentId", posts_file, line),
            ))
        else:
            skipped_posts += 1

    votes = []
    skipped_votes = 0
    post_ids = {p.post_id for p in posts}
    for line, attrs in _iter_rows(votes_file):
        kind = _VOTE_KINDS.get(attrs.get("VoteTypeId"))
        if kind is None:
            skipped_votes += 1
            continue
        pid = _attr_int(attrs, "PostId", votes_file, line)
        if pid is None or pid not in post_ids:
            skipped_votes += 1
            continue
        voter = resolve(_attr_int(attrs, "UserId", votes_file, line))
        votes.append(Vote(subsite=subsite_name, post_id=pid, kind=kind, voter=voter))

    if skipped_posts:
        warnings.warn(
            f"{subsite_name}: skipped {skipped_posts} posts of other kinds", stacklevel=2
        )
    if skipped_votes:
        warnings.warn(
            f"{subsite_name}: skipped {skipped_votes} votes (unknown kind or missing post)",
            stacklevel=2,
        )
    return QaDataset(users, posts, votes)


def merge_datasets(datasets) -> QaDataset:
    """Combine per-subsite datasets into one network-wide dataset."""
    users, posts, votes = [], [], []
    for data in datasets:
        users.extend(data.users)
        posts.extend(data.posts)
        votes.extend(data.votes)
    return QaDataset(users, posts, votes)


def sample_dataset(data: QaDataset, n_users: int, seed: int) -> QaDataset:
    """Users-first sampling: draw users, then keep the posts that involve them.

    A post survives when its owner was sampled, when it is a question
    with an answer owned by a sampled user, or when it is an answer whose
    question is owned by a sampled user.  Votes survive when their post
    does.  The output users table is exactly the sampled set, so sampling
    a sample with the same count is the identity.
    """
    if n_users < 1:
        raise DataError("n_users must be >= 1")
    pool = data.users
    if n_users >= len(pool):
        if n_users > len(pool):
            warnings.warn(
                f"requested {n_users} users but only {len(pool)} exist; keeping all",
                stacklevel=2,
            )
        return QaDataset(data.users, data.posts, data.votes)
    rng = np.random.default_rng(seed)
    sampled = set(rng.choice(np.array(pool, dtype=np.int64), size=n_users, replace=False).tolist())

    questions_with_sampled_answer = {
        (p.subsite, p.parent_id) for p in data.posts
        if p.kind == "answer" and p.owner in sampled
    }
    kept = []
    for post in data.posts:
        if post.owner in sampled:
            kept.append(post)
        elif post.kind == "question" and (post.subsite, post.post_id) in questions_with_sampled_answer:
            kept.append(post)
        elif post.kind == "answer":
            parent = data.post(post.subsite, post.parent_id)
            if parent.owner in sampled:
                kept.append(post)

    kept_keys = {(p.subsite, p.post_id) for p in kept}
    fixed = []
    for post in kept:
        if post.kind == "question" and post.accepted_id is not None:
            if (post.subsite, post.accepted_id) not in kept_keys:
                post = Post(
                    post.post_id, post.subsite, post.kind, post.owner,
                    post.parent_id, None, post.tags,
                )
        fixed.append(post)
    votes = [v for v in data.votes if (v.subsite, v.post_id) in kept_keys]
    return QaDataset(sorted(sampled), fixed, votes)


@dataclass(frozen=True)
class ReputationLedger:
    """Per (user, topic) reputation totals plus a skipped-voter counter."""

    scores: dict
    skipped_voter_events: int = 0

    def top_users(self, topic: str, k: int | None = None) -> list[int]:
        """Users with reputation on a topic, by score descending then id."""
        scored = [(u, s) for (u, t), s in self.scores.items() if t == topic]
        scored.sort(key=lambda item: (-item[1], item[0]))
        users = [u for u, _ in scored]
        return users if k is None else users[:k]

    def topics(self) -> list[str]:
        return sorted({t for (_, t) in self.scores})


def reputation_scores(data: QaDataset) -> ReputationLedger:
    """Accumulate the five reputation rules over the dataset's events.

    Answer upvote +10, question upvote +5, any downvote −2 to the owner,
    downvoting an answer −1 to the voter, accepted answer +15 once.  Every
    event credits the full amount on each of the governing question's
    topics.  Only users present in the users table gain or lose score;
    answer-downvote events without a resolvable voter are counted.
    """
    users = set(data.users)
    scores: dict[tuple[int, str], int] = {}
    skipped = 0

    def credit(user, topics, delta):
        if user is None or user not in users:
            return
        for topic in topics:
            key = (user, topic)
            scores[key] = scores.get(key, 0) + delta

    accepted: set[tuple[str, int]] = set()
    for post in data.posts:
        if post.kind == "question" and post.accepted_id is not None:
            accepted.add((post.subsite, post.accepted_id))

    for vote in data.votes:
        post = data.post(vote.subsite, vote.post_id)
        topics = data.governing_question(post).tags
        if vote.kind == "upvote":
            credit(post.owner, topics, 10 if post.kind == "answer" else 5)
        elif vote.kind == "downvote":
            credit(post.owner, topics, -2)
            if post.kind == "answer":
                if vote.voter is not None and vote.voter in users:
                    credit(vote.voter, topics, -1)
                else:
                    skipped += 1
        elif vote.kind == "accept" and post.kind == "answer":
            accepted.add((vote.subsite, vote.post_id))

    for subsite, post_id in sorted(accepted):
        post = data.post(subsite, post_id)
        credit(post.owner, data.governing_question(post).tags, 15)

    return ReputationLedger(scores, skipped)


@dataclass(frozen=True)
class BuildInputs:
    """Model inputs plus the index tables mapping them back to entities.

    ``questions[i]`` is the (subsite, post id) behind tensor row i,
    ``topics[j]`` the namespaced tag of tensor column j, ``users[l]`` the
    network-wide id of expert column l. ``subsites[x]`` names row x of the
    site membership matrix and subsite group x of the tree.
    """

    tensor: SparseTensor4
    site_matrix: MembershipMatrix
    topic_matrix: MembershipMatrix
    tree: HierarchyTree
    questions: tuple
    topics: tuple
    users: tuple
    subsites: tuple
    bucket_edges: tuple
    tree_s: float
    tree_g: float


def question_scores(data: QaDataset) -> dict:
    """Net vote score per question key, from the parsed votes."""
    scores = {}
    for vote in data.votes:
        post = data.post(vote.subsite, vote.post_id)
        if post.kind != "question":
            continue
        key = (vote.subsite, vote.post_id)
        if vote.kind == "upvote":
            scores[key] = scores.get(key, 0) + 1
        elif vote.kind == "downvote":
            scores[key] = scores.get(key, 0) - 1
    return scores


def build_inputs(
    data: QaDataset,
    bucket_edges=DEFAULT_BUCKET_EDGES,
    tree_s: float = 0.5,
    tree_g: float = 0.5,
) -> BuildInputs:
    """Assemble the evidence tensor, membership matrices, and tree.

    Tensor cell (i, j, k, l) counts answers by user l to question i under
    tag j, with k the bucket of the question's net vote score.  Questions
    without tags are left out of the index tables; subsites with no
    tagged questions are dropped with a warning.  Each question's tree
    leaf sits under its first-listed tag so the topic groups partition
    the questions.
    """
    edges = tuple(int(e) for e in bucket_edges)
    if list(edges) != sorted(set(edges)):
        raise DataError("bucket edges must be strictly increasing")
    questions = [p for p in data.posts if p.kind == "question" and p.tags]
    if not questions:
        raise EmptyInputError("no tagged questions in the dataset")

    dropped = [s for s in data.subsites if s not in {q.subsite for q in questions}]
    if dropped:
        warnings.warn(
            f"dropping subsites with no tagged questions: {', '.join(dropped)}",
            stacklevel=2,
        )

    q_keys = [(q.subsite, q.post_id) for q in questions]
    q_index = {key: i for i, key in enumerate(q_keys)}
    topics = tuple(sorted({t for q in questions for t in q.tags}))
    t_index = {t: j for j, t in enumerate(topics)}
    users = tuple(data.users)
    u_index = {u: l for l, u in enumerate(users)}
    subsites = tuple(sorted({q.subsite for q in questions}))
    s_index = {s: x for x, s in enumerate(subsites)}

    scores = question_scores(data)
    buckets = {key: bisect_right(edges, scores.get(key, 0)) for key in q_keys}

    cells = []
    site_pairs = []
    topic_pairs = []
    for post in data.posts:
        if post.kind != "answer" or post.owner not in u_index:
            continue
        key = (post.subsite, post.parent_id)
        if key not in q_index:
            continue
        i = q_index[key]
        k = buckets[key]
        l = u_index[post.owner]
        site_pairs.append((s_index[post.subsite], l))
        for tag in data.post(*key).tags:
            j = t_index[tag]
            cells.append((i, j, k, l, 1.0))
            topic_pairs.append((j, l))

    tensor = SparseTensor4(
        (len(questions), len(topics), len(edges) + 1, len(users)), entries=cells
    )
    site_matrix = MembershipMatrix(len(subsites), len(users), site_pairs)
    topic_matrix = MembershipMatrix(len(topics), len(users), topic_pairs)

    nested = []
    for subsite in subsites:
        primary = {}
        for q in questions:
            if q.subsite == subsite:
                primary.setdefault(q.tags[0], []).append(q_index[(q.subsite, q.post_id)])
        nested.append([primary[tag] for tag in sorted(primary)])
    sg = {level: (tree_s, tree_g) for level in range(3)}
    tree = tree_from_nested(nested, sg_by_level=sg)

    return BuildInputs(
        tensor=tensor,
        site_matrix=site_matrix,
        topic_matrix=topic_matrix,
        tree=tree,
        questions=tuple(q_keys),
        topics=topics,
        users=users,
        subsites=subsites,
        bucket_edges=edges,
        tree_s=float(tree_s),
        tree_g=float(tree_g),
    )
