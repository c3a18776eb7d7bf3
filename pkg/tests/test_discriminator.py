"""
Unit tests for the discriminator in discriminator.py.
"""

import math

import numpy as np
import pytest

import diffcore as dc
from discriminator import (
    LabeledBatch,
    accuracy,
    copy_backbone,
    disc_loss,
    disc_loss_tensors,
    disc_train_step,
    disc_update,
    prob_real,
    score,
    score_tensor,
)
from errors import InvalidInputError, InvalidTokenError
from seqmodel import Sequence, sample_batch
from tests.conftest import make_disc, make_gen


REAL = Sequence((0,), (1, 1, 1))
FAKE = Sequence((0,), (2, 2, 2))


def perfect_disc():
    """Scores +50 on token 1 responses and -50 on token 2 responses."""
    disc = make_disc(seed=None, vocab_size=4, embed_dim=1, hidden_dim=1)
    disc.params["embed"][1, 0] = 1.0
    disc.params["embed"][2, 0] = -1.0
    disc.params["w_in"][0, 0] = 10.0
    disc.params["w_score"][0] = 50.0 / math.tanh(10.0)
    return disc


def negated(disc):
    flipped = make_disc(seed=None, vocab_size=disc.vocab_size, embed_dim=disc.embed_dim,
                        hidden_dim=disc.hidden_dim)
    flipped.params.assign(disc.params)
    flipped.params["w_score"][...] *= -1
    flipped.params["b_score"][...] *= -1
    return flipped


class TestScore:
    """Tests for score() / prob_real()."""

    def test_zero_head_scores_zero(self):
        disc = make_disc(seed=3, zero_head=True)
        seq = Sequence((0, 1), (2,))
        assert score(disc, seq) == 0.0
        assert prob_real(disc, seq) == 0.5

    def test_deterministic(self, tiny_disc):
        seq = Sequence((2,), (1, 0))
        assert score(tiny_disc, seq) == score(tiny_disc, seq)

    def test_vocabulary_mismatch(self, tiny_disc):
        with pytest.raises(InvalidTokenError):
            score(tiny_disc, Sequence((0,), (7,)))

    def test_empty_response_is_finite(self, tiny_disc):
        assert math.isfinite(score(tiny_disc, Sequence((1, 2), ())))

    def test_saturated_probabilities_stay_open(self):
        disc = perfect_disc()
        disc.params["w_score"][0] *= 20.0
        assert score(disc, REAL) > 700.0
        assert 0.0 < prob_real(disc, FAKE) < prob_real(disc, REAL) < 1.0

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            disc = make_disc(seed=seed)
            seq = Sequence((seed % 3,), (1, (seed + 2) % 3))
            assert dc.finite_diff_check(lambda w: score_tensor(disc, w, seq), disc.params) < 1e-4


class TestDiscLoss:
    """Tests for disc_loss()."""

    def test_all_zero_scores(self):
        disc = make_disc(seed=2, vocab_size=4, zero_head=True)
        total, real, fake = disc_loss(disc, LabeledBatch.of([REAL], 1), LabeledBatch.of([FAKE, FAKE], 0))
        for value in (total, real, fake):
            assert value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_perfect_discriminator(self):
        total, _, _ = disc_loss(perfect_disc(), LabeledBatch.of([REAL] * 3, 1), LabeledBatch.of([FAKE] * 3, 0))
        assert total < 1e-20

    def test_total_is_mean_of_parts(self):
        disc = make_disc(seed=8, vocab_size=4)
        total, real, fake = disc_loss(disc, LabeledBatch.of([REAL], 1), LabeledBatch.of([FAKE], 0))
        assert total == pytest.approx((real + fake) / 2, abs=1e-15)

    def test_swap_with_negated_scores(self):
        disc = make_disc(seed=9, vocab_size=4)
        real_batch = LabeledBatch.of([REAL, Sequence((3,), (1, 2))], 1)
        fake_batch = LabeledBatch.of([FAKE], 0)
        total, real, fake = disc_loss(disc, real_batch, fake_batch)
        s_total, s_real, s_fake = disc_loss(
            negated(disc), LabeledBatch.of(fake_batch.sequences, 1), LabeledBatch.of(real_batch.sequences, 0)
        )
        assert abs(total - s_total) < 1e-12
        assert abs(real - s_fake) < 1e-12
        assert abs(fake - s_real) < 1e-12

    def test_bce_gradient_matches_finite_differences(self):
        disc = make_disc(seed=12, vocab_size=4)
        real_batch = LabeledBatch.of([REAL], 1)
        fake_batch = LabeledBatch.of([FAKE, Sequence((1,), (0,))], 0)
        f = lambda w: disc_loss_tensors(disc, w, real_batch, fake_batch)[0]
        assert dc.finite_diff_check(f, disc.params) < 1e-4


class TestLabeledBatch:
    """Tests for LabeledBatch."""

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            LabeledBatch([])

    def test_rejects_bad_label(self):
        with pytest.raises(InvalidInputError):
            LabeledBatch([(REAL, 2)])

    def test_provenance(self):
        assert LabeledBatch.of([FAKE], 0, provenance=4).provenance == 4


class TestDiscUpdate:
    """Tests for disc_update() / disc_train_step()."""

    def test_zero_lr_leaves_params(self):
        disc = make_disc(seed=5, vocab_size=4)
        before = disc.params.checksum()
        disc_update(disc, LabeledBatch.of([REAL], 1), LabeledBatch.of([FAKE], 0), 0.0)
        assert disc.params.checksum() == before

    def test_negative_lr_rejected(self):
        disc = make_disc(seed=5, vocab_size=4)
        with pytest.raises(InvalidInputError):
            disc_train_step(disc, LabeledBatch.of([REAL], 1), LabeledBatch.of([FAKE], 0), -0.1)

    def test_generator_untouched(self):
        gen = make_gen(seed=6, vocab_size=4, max_response_len=3)
        disc = make_disc(seed=6, vocab_size=4)
        before = gen.params.checksum()
        fakes = sample_batch(gen, [(0,)] * 4, np.random.default_rng(0))
        disc_update(disc, LabeledBatch.of([REAL] * 4, 1), LabeledBatch.of(fakes, 0), 0.1)
        assert gen.params.checksum() == before

    def test_separable_toy_reaches_high_accuracy(self):
        disc = make_disc(seed=7, vocab_size=4)
        real_batch = LabeledBatch.of([REAL] * 4, 1)
        fake_batch = LabeledBatch.of([FAKE] * 4, 0)
        for _ in range(200):
            disc_update(disc, real_batch, fake_batch, 0.5)
        both = LabeledBatch(real_batch.items + fake_batch.items)
        assert accuracy(disc, both) >= 0.95

    def test_small_lr_loss_non_increasing(self):
        disc = make_disc(seed=10, vocab_size=4)
        real_batch = LabeledBatch.of([REAL] * 2, 1)
        fake_batch = LabeledBatch.of([FAKE] * 2, 0)
        losses = [disc_train_step(disc, real_batch, fake_batch, 1e-2)[0] for _ in range(11)]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_adam_counts_its_steps(self):
        disc = make_disc(seed=10, vocab_size=4)
        adam = dc.Adam(1e-2)
        for _ in range(3):
            disc_train_step(disc, LabeledBatch.of([REAL], 1), LabeledBatch.of([FAKE], 0), 1e-2, adam)
        assert adam.steps == 3

    def test_adam_outpaces_gradient_descent(self):
        real_batch = LabeledBatch.of([REAL] * 2, 1)
        fake_batch = LabeledBatch.of([FAKE] * 2, 0)
        plain = make_disc(seed=10, vocab_size=4)
        adaptive = make_disc(seed=10, vocab_size=4)
        adam = dc.Adam(1e-2)
        for _ in range(10):
            disc_train_step(plain, real_batch, fake_batch, 1e-2)
            disc_train_step(adaptive, real_batch, fake_batch, 1e-2, adam)
        assert disc_loss(adaptive, real_batch, fake_batch)[0] < disc_loss(plain, real_batch, fake_batch)[0]


class TestCopyBackbone:
    """Tests for copy_backbone()."""

    def test_copies_values_without_sharing(self):
        gen = make_gen(seed=3)
        disc = make_disc(seed=None)
        copy_backbone(disc, gen)
        for name in ("embed", "w_in", "w_rec", "b_h"):
            assert np.array_equal(disc.params[name], gen.params[name])
        gen.params["embed"][...] += 1.0
        assert not np.array_equal(disc.params["embed"], gen.params["embed"])

    def test_head_untouched(self):
        disc = make_disc(seed=4)
        head = disc.params["w_score"].copy()
        copy_backbone(disc, make_gen(seed=3))
        assert np.array_equal(disc.params["w_score"], head)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            copy_backbone(make_disc(seed=4, hidden_dim=5), make_gen(seed=3))

    def test_architecture_mismatch(self):
        with pytest.raises(InvalidInputError):
            copy_backbone(make_disc(seed=4, architecture="attention"), make_gen(seed=3))


class TestAccuracy:
    """Tests for accuracy()."""

    def test_perfect(self):
        batch = LabeledBatch([(REAL, 1), (FAKE, 0), (REAL, 1)])
        assert accuracy(perfect_disc(), batch) == 1.0

    def test_zero_scores_predict_label_zero(self):
        disc = make_disc(seed=1, vocab_size=4, zero_head=True)
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=40)
        batch = LabeledBatch([(REAL if y else FAKE, int(y)) for y in labels])
        assert accuracy(disc, batch) == np.sum(labels == 0) / 40
