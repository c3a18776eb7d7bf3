"""
Unit tests for ratings and scoring in evaluation.py.
"""

import pytest

from errors import IncompletePairError, InvalidInputError
from evaluation import (
    RatingRecord,
    Tier,
    aggregate,
    evaluation_prompts,
    histogram,
    improvement,
    load_ratings,
    oracle_rate,
    oracle_share,
    paired_improvements,
    rate_system,
    save_ratings,
    tier_score,
)
from seqmodel import Sequence
from tasks import form_task, sentiment_task
from tests.conftest import ConstantTask, make_gen, saturate


G, A, B = Tier.GOOD, Tier.AVERAGE, Tier.BAD


def pairs(tuned_tiers, base_tiers, system="tuned", base="base", offset=0):
    records = []
    for i, (t, b) in enumerate(zip(tuned_tiers, base_tiers), start=offset):
        records.append(RatingRecord(f"p{i}", system, t))
        records.append(RatingRecord(f"p{i}", base, b))
    return records


def three_prompt_example():
    return pairs([G, A, A], [B, A, G])


def thirty_record_set():
    """Ten prompts rated for base, sft and rlgaf."""
    base = [B, B, A, A, G, B, A, B, G, A]
    sft = [A, B, G, A, G, A, B, A, A, A]
    rlgaf = [G, A, G, G, A, G, A, G, G, B]
    records = []
    for system, tiers in (("base", base), ("sft", sft), ("rlgaf", rlgaf)):
        records.extend(RatingRecord(f"q{i}", system, t) for i, t in enumerate(tiers))
    return records


class TestTierScore:
    """Tests for tier_score() / improvement()."""

    def test_mapping(self):
        assert [tier_score(t) for t in (G, A, B)] == [1, 0, -1]

    def test_string_tiers(self):
        assert tier_score("Good") == 1

    @pytest.mark.parametrize("tuned,base,expected", [(G, B, 2), (A, A, 0), (B, G, -2), (A, G, -1)])
    def test_improvement(self, tuned, base, expected):
        assert improvement(tuned, base) == expected

    def test_antisymmetric(self):
        for a in (G, A, B):
            for b in (G, A, B):
                assert improvement(a, b) == -improvement(b, a)

    def test_missing_rating(self):
        with pytest.raises(IncompletePairError) as excinfo:
            improvement(G, None)
        assert excinfo.value.missing == ["base"]


class TestAggregate:
    """Tests for aggregate() / paired_improvements()."""

    def test_three_prompt_example(self):
        records = three_prompt_example()
        assert paired_improvements(records, "tuned", "base") == {"p0": 2, "p1": 0, "p2": -1}
        assert aggregate(records, "tuned", "base") == 1

    def test_thirty_good_vs_bad(self):
        assert aggregate(pairs([G] * 30, [B] * 30), "tuned", "base") == 60

    def test_thirty_record_set(self):
        records = thirty_record_set()
        assert len(records) == 30
        assert aggregate(records, "sft", "base") == 2
        assert aggregate(records, "rlgaf", "base") == 7
        assert aggregate(records, "rlgaf", "sft") == 5

    def test_additive_over_disjoint_prompts(self):
        first = pairs([G, B], [A, A])
        second = pairs([A, G, G], [B, B, A], offset=10)
        assert aggregate(first + second, "tuned", "base") == (
            aggregate(first, "tuned", "base") + aggregate(second, "tuned", "base")
        )

    def test_missing_counterpart_lists_prompts(self):
        records = three_prompt_example() + [RatingRecord("p9", "tuned", G)]
        with pytest.raises(IncompletePairError) as excinfo:
            aggregate(records, "tuned", "base")
        assert excinfo.value.missing == ["p9"]

    def test_empty_shared_set(self):
        with pytest.raises(IncompletePairError):
            aggregate(three_prompt_example(), "rlgaf", "sft")

    def test_duplicate_rating(self):
        records = three_prompt_example() + [RatingRecord("p0", "tuned", B)]
        with pytest.raises(InvalidInputError):
            aggregate(records, "tuned", "base")

    def test_pairs_only_within_rater(self):
        records = [RatingRecord("p0", "tuned", G, "judge"), RatingRecord("p0", "base", B, "oracle")]
        with pytest.raises(IncompletePairError):
            aggregate(records, "tuned", "base")


class TestHistogram:
    """Tests for histogram()."""

    def test_single_record(self):
        assert histogram([RatingRecord("p0", "base", A)]) == [(("base", A), 1)]

    def test_tier_totals_match_record_count(self):
        records = thirty_record_set()
        rows = histogram(records)
        assert sum(count for _, count in rows) == len(records)
        assert [key for key, _ in rows][:3] == [("base", G), ("base", A), ("base", B)]

    def test_improvement_histogram(self):
        rows = histogram(three_prompt_example(), "improvement", "tuned", "base")
        assert rows == [(-1, 1), (0, 1), (2, 1)]

    def test_improvement_needs_systems(self):
        with pytest.raises(InvalidInputError):
            histogram(three_prompt_example(), "improvement")

    def test_unknown_key(self):
        with pytest.raises(InvalidInputError):
            histogram(three_prompt_example(), "rater")


class TestOracleRate:
    """Tests for oracle_rate() / rate_system() / oracle_share()."""

    def test_sentiment_tiers(self):
        task = sentiment_task(seed=1, vocab_size=20, p_set_size=4, n_set_size=4, max_response_len=8, corpus_size=10)
        p, n = sorted(task.positive), sorted(task.negative)
        z = task.neutral[0]
        assert oracle_rate(task, Sequence((z,), (p[0], p[1]))) == G
        assert oracle_rate(task, Sequence((z,), (p[0], n[0]))) == A
        assert oracle_rate(task, Sequence((z,), (n[0],))) == B

    def test_form_tiers(self):
        task = form_task(seed=1, vocab_size=8, max_response_len=8, corpus_size=10)
        assert oracle_rate(task, Sequence((1, 2, 3, 4), (2, 7))) == G
        assert oracle_rate(task, Sequence((1, 2, 3, 4), (2, 3, 4, 5, 7))) == B

    def test_rate_system_uses_greedy_decoding(self):
        task = ConstantTask(expert=(1, 1))
        records = rate_system(saturate(make_gen(), 1), task, "rlgaf", [(0,)] * 4)
        assert [r.prompt_id for r in records] == ["p0000", "p0001", "p0002", "p0003"]
        assert all(r.tier == G and r.rater == "oracle" for r in records)

    def test_evaluation_prompts_are_shared(self):
        task = form_task(seed=2, vocab_size=8, max_response_len=8, corpus_size=10)
        assert evaluation_prompts(task, 5, seed=3) == evaluation_prompts(task, 5, seed=3)

    def test_oracle_share(self):
        task = ConstantTask(expert=(1, 1))
        sequences = [Sequence((0,), (1, 1)), Sequence((0,), (2, 1)), Sequence((0,), (1, 1)), Sequence((0,), (0, 0))]
        assert oracle_share(task, sequences) == 0.5
        with pytest.raises(InvalidInputError):
            oracle_share(task, [])


class TestRatingsFile:
    """Tests for save_ratings() / load_ratings()."""

    def test_save_then_load(self, tmp_path):
        records = thirty_record_set()
        save_ratings(records, tmp_path / "ratings.jsonl")
        assert load_ratings(tmp_path / "ratings.jsonl") == records

    def test_extra_field_rejected(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        path.write_text('{"prompt_id": "p0", "system_id": "a", "tier": "Good", "rater": "oracle", "x": 1}\n')
        with pytest.raises(InvalidInputError):
            load_ratings(path)

    def test_unknown_tier_rejected(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        path.write_text('{"prompt_id": "p0", "system_id": "a", "tier": "Great", "rater": "oracle"}\n')
        with pytest.raises(InvalidInputError):
            load_ratings(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(InvalidInputError):
            load_ratings(path)

    def test_unknown_rater(self):
        with pytest.raises(InvalidInputError):
            RatingRecord("p0", "a", G, "crowd")
