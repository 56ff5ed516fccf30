"""Dump parsing, sampling, reputation arithmetic, and model-input assembly."""

import os
import warnings

import numpy as np
import pytest

from qaexpert.errors import ContractViolation, DataError, DumpParseError, EmptyInputError
from qaexpert.ingest import (
    Post,
    QaDataset,
    Vote,
    build_inputs,
    merge_datasets,
    parse_dump,
    question_scores,
    reputation_scores,
    sample_dataset,
)
from qaexpert.synthetic import write_subsite_dump

from conftest import FIXTURE_POSTS, FIXTURE_SITE, FIXTURE_USERS, FIXTURE_VOTES


def parse_site(site_dir, name):
    return parse_dump(
        os.path.join(site_dir, "Posts.xml"),
        os.path.join(site_dir, "Votes.xml"),
        os.path.join(site_dir, "Users.xml"),
        name,
    )


class TestParseDump:
    def test_fixture_counts(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        assert len(data.questions()) == 1
        assert len(data.answers()) == 2
        assert len(data.votes) == 3
        assert data.users == (1, 2, 3)

    def test_tags_are_namespaced(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        (question,) = data.questions()
        assert question.tags == (f"{FIXTURE_SITE}/a",)

    def test_pipe_separated_tags(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "|alpha|beta|"},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        data = parse_site(site, "s")
        assert data.questions()[0].tags == ("s/alpha", "s/beta")

    def test_empty_files_give_empty_dataset(self, tmp_path):
        site = os.path.join(tmp_path, "empty")
        write_subsite_dump(site, [], [], [])
        data = parse_site(site, "empty")
        assert data.posts == () and data.votes == () and data.users == ()

    def test_orphan_answer_names_the_post(self, tmp_path):
        posts = [{"Id": 5, "PostTypeId": 2, "ParentId": 99, "OwnerUserId": 1}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        with pytest.raises(DataError, match="5"):
            parse_site(site, "s")

    def test_malformed_xml_reports_line(self, tmp_path):
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, [], [], [])
        with open(os.path.join(site, "Posts.xml"), "w") as fh:
            fh.write("<posts>\n  <row Id broken\n</posts>\n")
        with pytest.raises(DumpParseError) as err:
            parse_site(site, "s")
        assert err.value.line is not None
        assert "Posts.xml" in str(err.value)

    def test_duplicate_post_id_rejected(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a>"},
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<b>"},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        with pytest.raises(DataError, match="duplicate"):
            parse_site(site, "s")

    def test_account_id_becomes_canonical(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 7, "Tags": "<a>"}]
        users = [{"Id": 7, "AccountId": 4242}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], users)
        data = parse_site(site, "s")
        assert data.users == (4242,)
        assert data.questions()[0].owner == 4242

    def test_unknown_post_kind_skipped_with_warning(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a>"},
            {"Id": 9, "PostTypeId": 4, "OwnerUserId": 1},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        with pytest.warns(UserWarning, match="skipped 1 posts"):
            data = parse_site(site, "s")
        assert len(data.posts) == 1

    def test_unknown_vote_kind_skipped_with_warning(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a>"}]
        votes = [
            {"Id": 1, "PostId": 1, "VoteTypeId": 2},
            {"Id": 2, "PostId": 1, "VoteTypeId": 8},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}])
        with pytest.warns(UserWarning, match="skipped 1 votes"):
            data = parse_site(site, "s")
        assert len(data.votes) == 1

    def test_unresolvable_owner_kept_without_owner(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 55, "Tags": "<a>"}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        data = parse_site(site, "s")
        assert data.questions()[0].owner is None


class TestDatasetInvariants:
    def test_answer_with_tags_rejected(self):
        posts = [
            Post(1, "s", "question", 1, None, None, ("s/a",)),
            Post(2, "s", "answer", 2, 1, None, ("s/a",)),
        ]
        with pytest.raises(DataError):
            QaDataset([1, 2], posts, [])

    def test_accepted_id_must_name_child_answer(self):
        posts = [
            Post(1, "s", "question", 1, None, 3, ("s/a",)),
            Post(2, "s", "answer", 2, 1, None, ()),
        ]
        with pytest.raises(DataError):
            QaDataset([1, 2], posts, [])

    def test_vote_on_missing_post_rejected(self):
        posts = [Post(1, "s", "question", 1, None, None, ("s/a",))]
        votes = [Vote("s", 9, "upvote", None)]
        with pytest.raises(DataError):
            QaDataset([1], posts, votes)

    def test_merge_combines_subsites(self, fixture_dump, tmp_path):
        other = os.path.join(tmp_path, "othersite")
        write_subsite_dump(
            other,
            [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 9, "Tags": "<b>"}],
            [],
            [{"Id": 9}],
        )
        merged = merge_datasets([
            parse_site(fixture_dump, FIXTURE_SITE),
            parse_site(other, "othersite"),
        ])
        assert merged.subsites == (FIXTURE_SITE, "othersite")
        assert merged.users == (1, 2, 3, 9)


class TestSampleDataset:
    def test_full_sample_is_identity(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        out = sample_dataset(data, len(data.users), seed=0)
        assert out.users == data.users
        assert out.posts == data.posts
        assert out.votes == data.votes

    def test_same_seed_same_output(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        a = sample_dataset(data, 2, seed=11)
        b = sample_dataset(data, 2, seed=11)
        assert a.users == b.users and a.posts == b.posts and a.votes == b.votes

    def test_idempotent(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        once = sample_dataset(data, 2, seed=3)
        twice = sample_dataset(once, 2, seed=3)
        assert once.users == twice.users and once.posts == twice.posts

    def test_sampling_the_questioner_keeps_question_and_answers(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        hit = None
        for seed in range(200):
            out = sample_dataset(data, 1, seed=seed)
            if out.users == (1,):
                hit = out
                break
        assert hit is not None, "no seed selected the questioner"
        kinds = sorted(p.kind for p in hit.posts)
        assert kinds == ["answer", "answer", "question"]

    def test_oversized_request_clamps_with_warning(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        with pytest.warns(UserWarning, match="keeping all"):
            out = sample_dataset(data, 50, seed=0)
        assert out.users == data.users

    def test_accepted_id_cleared_when_answer_dropped(self, tmp_path):
        # Question owner sampled alone: the question survives through its
        # answers' parents only if an answer's owner was sampled, so here
        # the accepted answer vanishes and the marker must follow it.
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a>",
             "AcceptedAnswerId": 2},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
            {"Id": 3, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 3},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}, {"Id": 2}, {"Id": 3}])
        data = parse_site(site, "s")
        hit = None
        for seed in range(200):
            out = sample_dataset(data, 1, seed=seed)
            if out.users == (3,):
                hit = out
                break
        assert hit is not None
        (question,) = hit.questions()
        assert question.accepted_id is None
        assert {p.post_id for p in hit.posts} == {1, 3}


class TestReputation:
    def test_fixture_table_arithmetic(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        ledger = reputation_scores(data)
        topic = f"{FIXTURE_SITE}/a"
        assert ledger.scores == {(2, topic): 35}
        assert ledger.top_users(topic) == [2]

    def test_question_votes(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<t>"}]
        votes = [
            {"Id": 1, "PostId": 1, "VoteTypeId": 2},
            {"Id": 2, "PostId": 1, "VoteTypeId": 3},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}])
        ledger = reputation_scores(parse_site(site, "s"))
        assert ledger.scores == {(1, "s/t"): 3}

    def test_answer_downvote_debits_voter_and_owner(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<t>"},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
        ]
        votes = [{"Id": 1, "PostId": 2, "VoteTypeId": 3, "UserId": 3}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}, {"Id": 2}, {"Id": 3}])
        ledger = reputation_scores(parse_site(site, "s"))
        assert ledger.scores == {(2, "s/t"): -2, (3, "s/t"): -1}
        assert ledger.skipped_voter_events == 0

    def test_anonymous_answer_downvote_counts_skip(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<t>"},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
        ]
        votes = [{"Id": 1, "PostId": 2, "VoteTypeId": 3}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}, {"Id": 2}])
        ledger = reputation_scores(parse_site(site, "s"))
        assert ledger.scores == {(2, "s/t"): -2}
        assert ledger.skipped_voter_events == 1

    def test_accept_marker_and_vote_count_once(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<t>",
             "AcceptedAnswerId": 2},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
        ]
        votes = [{"Id": 1, "PostId": 2, "VoteTypeId": 1}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}, {"Id": 2}])
        ledger = reputation_scores(parse_site(site, "s"))
        assert ledger.scores == {(2, "s/t"): 15}

    def test_uninvolved_user_has_no_entry(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        ledger = reputation_scores(data)
        assert not any(u == 3 for (u, _) in ledger.scores)

    def test_multi_tag_question_credits_each_topic(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a><b>"},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
        ]
        votes = [{"Id": 1, "PostId": 2, "VoteTypeId": 2}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}, {"Id": 2}])
        ledger = reputation_scores(parse_site(site, "s"))
        assert ledger.scores == {(2, "s/a"): 10, (2, "s/b"): 10}


class TestBuildInputs:
    def test_fixture_shapes(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        tables = build_inputs(data)
        assert tables.tensor.nnz == 2
        assert tables.tensor.dims == (1, 1, 5, 3)
        assert tables.topics == (f"{FIXTURE_SITE}/a",)
        assert tables.users == (1, 2, 3)
        assert tables.subsites == (FIXTURE_SITE,)
        # both answerers participate in the one subsite and the one topic
        assert tables.site_matrix.rows == 1
        np.testing.assert_array_equal(
            tables.site_matrix.to_dense(), [[0.0, 1.0, 1.0]]
        )
        np.testing.assert_array_equal(
            tables.topic_matrix.to_dense(), [[0.0, 1.0, 1.0]]
        )

    def test_fixture_tree_is_single_chain(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        tree = build_inputs(data).tree
        assert tree.n_rows == 1
        assert len(tree.level_nodes(1)) == 1
        assert len(tree.level_nodes(2)) == 1
        assert tree.level_groups(1) == [frozenset({0})]

    def test_vote_bucket_assignment(self, tmp_path):
        # scores 0, 1, 3, 10 and a downvoted question cover all five bands
        posts = []
        votes = []
        vid = 0
        score_plan = [(-1, 0), (0, 1), (1, 2), (3, 3), (10, 4)]
        for qid, (score, _) in enumerate(score_plan, start=1):
            posts.append({
                "Id": qid * 10, "PostTypeId": 1, "OwnerUserId": 1,
                "Tags": f"<t{qid}>",
            })
            posts.append({
                "Id": qid * 10 + 1, "PostTypeId": 2, "ParentId": qid * 10,
                "OwnerUserId": 2,
            })
            for _ in range(abs(score)):
                vid += 1
                votes.append({
                    "Id": vid, "PostId": qid * 10,
                    "VoteTypeId": 2 if score > 0 else 3,
                })
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}, {"Id": 2}])
        data = parse_site(site, "s")
        tables = build_inputs(data)
        got = {}
        for (i, j, k, l), v in zip(tables.tensor.indices, tables.tensor.values):
            got[tables.questions[i]] = k
        for qid, (score, bucket) in enumerate(score_plan, start=1):
            assert got[("s", qid * 10)] == bucket, f"score {score}"

    def test_question_scores_from_votes(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<t>"}]
        votes = [
            {"Id": 1, "PostId": 1, "VoteTypeId": 2},
            {"Id": 2, "PostId": 1, "VoteTypeId": 2},
            {"Id": 3, "PostId": 1, "VoteTypeId": 3},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, votes, [{"Id": 1}])
        data = parse_site(site, "s")
        assert question_scores(data) == {("s", 1): 1}

    def test_untagged_questions_left_out(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a>"},
            {"Id": 2, "PostTypeId": 1, "OwnerUserId": 1},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        tables = build_inputs(parse_site(site, "s"))
        assert len(tables.questions) == 1

    def test_no_tagged_questions_is_empty_input(self, tmp_path):
        posts = [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 1}]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}])
        with pytest.raises(EmptyInputError):
            build_inputs(parse_site(site, "s"))

    def test_subsite_without_tagged_questions_dropped(self, fixture_dump, tmp_path):
        bare = os.path.join(tmp_path, "bare")
        write_subsite_dump(
            bare, [{"Id": 1, "PostTypeId": 1, "OwnerUserId": 8}], [], [{"Id": 8}],
        )
        merged = merge_datasets([
            parse_site(fixture_dump, FIXTURE_SITE),
            parse_site(bare, "bare"),
        ])
        with pytest.warns(UserWarning, match="bare"):
            tables = build_inputs(merged)
        assert tables.subsites == (FIXTURE_SITE,)
        assert tables.site_matrix.rows == 1

    def test_disjoint_subsites_give_orthogonal_site_rows(self, tmp_path):
        sites = []
        for name, uid in (("sa", 1), ("sb", 2)):
            d = os.path.join(tmp_path, name)
            write_subsite_dump(
                d,
                [
                    {"Id": 1, "PostTypeId": 1, "OwnerUserId": uid, "Tags": "<t>"},
                    {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": uid},
                ],
                [],
                [{"Id": uid}],
            )
            sites.append(parse_site(d, name))
        tables = build_inputs(merge_datasets(sites))
        dense = tables.site_matrix.to_dense()
        assert float(dense[0] @ dense[1]) == 0.0

    def test_bucket_edges_must_increase(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        with pytest.raises(DataError):
            build_inputs(data, bucket_edges=(0, 3, 3, 10))

    def test_index_tables_are_bijections(self, fixture_dump):
        data = parse_site(fixture_dump, FIXTURE_SITE)
        tables = build_inputs(data)
        assert len(set(tables.questions)) == len(tables.questions) == tables.tensor.dims[0]
        assert len(set(tables.topics)) == len(tables.topics) == tables.tensor.dims[1]
        assert len(set(tables.users)) == len(tables.users) == tables.tensor.dims[3]

    def test_secondary_tags_count_as_evidence_but_not_tree_placement(self, tmp_path):
        posts = [
            {"Id": 1, "PostTypeId": 1, "OwnerUserId": 1, "Tags": "<a><b>"},
            {"Id": 2, "PostTypeId": 2, "ParentId": 1, "OwnerUserId": 2},
        ]
        site = os.path.join(tmp_path, "s")
        write_subsite_dump(site, posts, [], [{"Id": 1}, {"Id": 2}])
        tables = build_inputs(parse_site(site, "s"))
        assert tables.tensor.nnz == 2  # one cell per tag
        # the question's tree leaf sits under its first tag only
        assert len(tables.tree.level_nodes(2)) == 1
