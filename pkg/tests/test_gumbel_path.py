"""
Unit tests for the relaxed generator path in gumbel_path.py.
"""

from collections import Counter

import numpy as np
import pytest

import diffcore as dc
from errors import InvalidInputError, InvalidTokenError
from gumbel_path import (
    GumbelConfig,
    RelaxedToken,
    draw_noises,
    exact_onehot,
    gumbel_generator_step,
    gumbel_softmax_sample,
    onehot_embed,
    relax,
    relaxed_loss,
    relaxed_response,
)
from seeding import stream
from tests.conftest import ConstantTask, make_disc, make_gen


LOGITS = np.log(np.array([1.0, 2.0, 3.0]))
CHI2_CRITICAL_2DF = 9.21  # p = 0.01


def argmax_counts(tau, draws, seed):
    rng = np.random.default_rng(seed)
    return Counter(gumbel_softmax_sample(LOGITS, tau, rng).argmax() for _ in range(draws))


def chi_square(counts, draws):
    expected = dc.softmax(LOGITS).data * draws
    return sum((counts[k] - expected[k]) ** 2 / expected[k] for k in range(len(LOGITS)))


class TestGumbelSoftmaxSample:
    """Tests for gumbel_softmax_sample() / relax()."""

    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0, 5.0])
    def test_sums_to_one(self, tau, rng):
        for _ in range(20):
            token = gumbel_softmax_sample(LOGITS, tau, rng)
            assert abs(token.values.sum() - 1.0) < 1e-9
            assert np.all(token.values >= 0)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
    def test_argmax_follows_softmax(self, tau):
        draws = 6_000
        assert chi_square(argmax_counts(tau, draws, seed=11), draws) < CHI2_CRITICAL_2DF

    @pytest.mark.slow
    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
    def test_argmax_follows_softmax_sixty_thousand(self, tau):
        draws = 60_000
        assert chi_square(argmax_counts(tau, draws, seed=12), draws) < CHI2_CRITICAL_2DF

    def test_low_temperature_concentrates(self):
        rng = np.random.default_rng(3)
        peaks = [gumbel_softmax_sample(LOGITS, 0.01, rng).values.max() for _ in range(2_000)]
        assert np.mean(peaks) > 0.95

    def test_straight_through_is_exact_onehot(self):
        noise = np.array([0.1, 0.3, -0.2])
        soft = relax(dc.as_tensor(LOGITS), noise, 0.7)
        hard = relax(dc.as_tensor(LOGITS), noise, 0.7, straight_through=True)
        assert sorted(hard.values.tolist()) == [0.0, 0.0, 1.0]
        assert hard.argmax() == soft.argmax()

    def test_rejects_bad_temperature(self, rng):
        with pytest.raises(InvalidInputError):
            gumbel_softmax_sample(LOGITS, 0.0, rng)
        with pytest.raises(InvalidInputError):
            gumbel_softmax_sample(LOGITS, float("inf"), rng)

    def test_rejects_non_finite_logits(self, rng):
        with pytest.raises(InvalidInputError):
            gumbel_softmax_sample(np.array([0.0, np.nan]), 1.0, rng)


class TestRelaxedToken:
    """Tests for RelaxedToken / exact_onehot() / onehot_embed()."""

    def test_rejects_non_distribution(self):
        with pytest.raises(InvalidInputError):
            RelaxedToken(np.array([0.5, 0.6]))

    def test_exact_onehot_selects_embedding_row(self):
        table = np.arange(12, dtype=float).reshape(4, 3)
        for k in range(4):
            assert np.array_equal(onehot_embed(exact_onehot(k, 4), table).data, table[k])

    def test_relaxed_embedding_is_weighted_average(self):
        table = np.array([[1.0, 0.0], [0.0, 2.0]])
        out = onehot_embed(RelaxedToken(np.array([0.25, 0.75])), table)
        assert np.allclose(out.data, [0.25, 1.5])

    def test_exact_onehot_rejects_bad_token(self):
        with pytest.raises(InvalidTokenError):
            exact_onehot(4, 4)


class TestRelaxedResponse:
    """Tests for relaxed_response() / relaxed_loss()."""

    def test_fixed_length_without_terminator(self, tiny_gen, rng):
        noise = draw_noises(tiny_gen, 1, rng)[0]
        tokens = relaxed_response(tiny_gen, tiny_gen.params.constants(), (0, 1), noise, 0.5)
        assert len(tokens) == tiny_gen.max_response_len

    def test_vocabulary_mismatch(self, tiny_gen, rng):
        disc = make_disc(vocab_size=4)
        with pytest.raises(InvalidInputError):
            relaxed_loss(tiny_gen, tiny_gen.params.constants(), disc, [(0,)], draw_noises(tiny_gen, 1, rng), 1.0)

    def test_gradient_matches_finite_differences(self):
        gen = make_gen(seed=5)
        disc = make_disc(seed=6)
        prompts = [(0,), (2, 1)]
        noises = draw_noises(gen, len(prompts), np.random.default_rng(7))
        f = lambda w: relaxed_loss(gen, w, disc, prompts, noises, 0.5, stop_on_terminator=False)
        assert dc.finite_diff_check(f, gen.params) < 1e-4


class TestGumbelGeneratorStep:
    """Tests for gumbel_generator_step()."""

    def test_zero_lr_leaves_params(self, tiny_gen, tiny_disc):
        before = tiny_gen.params.checksum()
        _, record = gumbel_generator_step(
            tiny_gen, tiny_disc, ConstantTask(), GumbelConfig(lr=0.0, batch_size=2), stream(0, "gumbel-noise")
        )
        assert tiny_gen.params.checksum() == before
        assert 0.0 < record.reward_mean <= 1.0

    def test_discriminator_untouched(self, tiny_gen, tiny_disc):
        before = tiny_disc.params.checksum()
        gumbel_generator_step(tiny_gen, tiny_disc, ConstantTask(), GumbelConfig(lr=0.5), stream(1, "gumbel-noise"))
        assert tiny_disc.params.checksum() == before

    def test_small_step_lowers_frozen_noise_loss(self):
        gen = make_gen(seed=9)
        disc = make_disc(seed=10)
        task = ConstantTask()
        cfg = GumbelConfig(lr=1e-3, batch_size=4, tau=0.5)
        # ConstantTask draws no prompt randomness, so a twin stream replays the step's noise
        noises = draw_noises(gen, cfg.batch_size, stream(9, "gumbel-noise"))
        prompts = [task.prompt] * cfg.batch_size
        before = relaxed_loss(gen, gen.params.constants(), disc, prompts, noises, cfg.tau).item()
        _, record = gumbel_generator_step(gen, disc, task, cfg, stream(9, "gumbel-noise"))
        after = relaxed_loss(gen, gen.params.constants(), disc, prompts, noises, cfg.tau).item()
        assert record.loss_g == pytest.approx(before, abs=1e-12)
        assert after < before
        assert record.reward_mean == pytest.approx(np.exp(-before))

    def test_noise_follows_noise_stream_not_prompt_stream(self):
        cfg = GumbelConfig(lr=0.1, batch_size=3)
        checksums = []
        for prompt_seed, noise_seed in [(1, 5), (2, 5), (1, 6)]:
            gen = make_gen(seed=9)
            gumbel_generator_step(
                gen, make_disc(seed=10), ConstantTask(), cfg, stream(prompt_seed, "sampling"),
                noise_rng=stream(noise_seed, "gumbel-noise"),
            )
            checksums.append(gen.params.checksum())
        assert checksums[0] == checksums[1]
        assert checksums[0] != checksums[2]


class TestGumbelConfig:
    """Tests for GumbelConfig."""

    def test_anneal_schedule(self):
        cfg = GumbelConfig(tau=1.0, anneal=True, anneal_rate=0.5, min_tau=0.1)
        assert cfg.tau_at(0) == 1.0
        assert cfg.tau_at(2) == 0.25
        assert cfg.tau_at(10) == 0.1

    def test_no_anneal_keeps_tau(self):
        assert GumbelConfig(tau=0.7).tau_at(50) == 0.7

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            GumbelConfig(tau=-1.0).validate()
        with pytest.raises(InvalidInputError):
            GumbelConfig(lr=-0.1).validate()
        with pytest.raises(InvalidInputError):
            GumbelConfig(anneal_rate=0.0).validate()
