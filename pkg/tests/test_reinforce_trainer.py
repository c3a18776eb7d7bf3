"""
Unit tests for the REINFORCE trainer in reinforce_trainer.py.

Tests cover:
- reward-to-go and reward normalization arithmetic
- terminal and rollout reward assignment
- the Monte Carlo estimator against exhaustive enumeration
- reinforce_step determinism and the bandit toy
"""

import math

import numpy as np
import pytest

import diffcore as dc
from errors import InvalidInputError
from reinforce_trainer import (
    ReinforceConfig,
    Trajectory,
    assign_rewards,
    build_trajectory,
    discriminator_reward,
    estimate_gradient,
    normalize_reward,
    reinforce_step,
    reward_to_go,
    sample_trajectories,
)
from seeding import stream
from seqmodel import Sequence, log_prob_tensor, sample_response
from tests.conftest import ConstantTask, all_responses, make_disc, make_gen, saturate


def toy_reward(seq):
    return 1.0 if seq.response == (2, 0) else 0.2 * seq.response[0]


def exact_gradient(gen, reward_fn, prompt, length):
    """∇ Σ_y P(y) R(y) by enumerating every response."""
    leaves = gen.params.track()
    terms = [
        dc.mul(dc.exp(log_prob_tensor(gen, leaves, Sequence(prompt, y))), reward_fn(Sequence(prompt, y)))
        for y in all_responses(gen.vocab_size, length)
    ]
    return dc.backward(dc.add_all(terms), leaves)


def prob_of(gen, prompt, response):
    return math.exp(log_prob_tensor(gen, gen.params.constants(), Sequence(prompt, response)).item())


class TestRewardToGo:
    """Tests for reward_to_go()."""

    def test_terminal_reward(self):
        assert reward_to_go([0, 0, 1]) == [1, 1, 1]

    def test_suffix_sums(self):
        assert reward_to_go([1, 2, 3]) == [6, 5, 3]

    def test_zeros(self):
        assert reward_to_go([0.0, 0.0]) == [0.0, 0.0]

    def test_linearity(self):
        a, b = [0.5, -1.0, 2.0, 0.25], [1.0, 0.5, -0.25, 4.0]
        combined = reward_to_go([x + y for x, y in zip(a, b)])
        assert combined == [x + y for x, y in zip(reward_to_go(a), reward_to_go(b))]

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            reward_to_go([])


class TestNormalizeReward:
    """Tests for normalize_reward()."""

    def test_normalized_zero(self):
        assert normalize_reward(0.0, "normalized") == 0.0

    def test_normalized_saturates_at_half(self):
        assert normalize_reward(50.0, "normalized") == pytest.approx(0.5)
        assert -0.5 < normalize_reward(-50.0, "normalized") < 0.5

    def test_sigmoid(self):
        assert normalize_reward(0.0, "sigmoid") == 0.5

    @pytest.mark.parametrize("value", [-800.0, -50.0, 50.0, 800.0])
    def test_sigmoid_stays_open(self, value):
        assert 0.0 < normalize_reward(value, "sigmoid") < 1.0

    def test_raw(self):
        assert normalize_reward(-3.25, "raw") == -3.25

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            normalize_reward(0.0, "tanh")

    def test_discriminator_reward_zero_head(self):
        reward = discriminator_reward(make_disc(seed=0, zero_head=True), "sigmoid")
        assert reward(Sequence((0,), (1, 2))) == 0.5


class TestTrajectory:
    """Tests for Trajectory."""

    def test_lengths_must_agree(self):
        with pytest.raises(InvalidInputError):
            Trajectory(Sequence((0,), (1, 2)), [0.0], [0.0, 1.0], [1.0, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            Trajectory(Sequence((0,), ()), [], [], [])


class TestAssignRewards:
    """Tests for assign_rewards()."""

    def test_terminal_mode(self):
        gen = make_gen(max_response_len=4)
        rewards = assign_rewards(gen, lambda seq: 0.8, Sequence((0,), (1, 2, 0, 1)), ReinforceConfig(rollout_count=0))
        assert rewards == [0.0, 0.0, 0.0, 0.8]

    def test_saturated_rollouts_equal_full_reward(self):
        gen = saturate(make_gen(max_response_len=3), 1)
        seq = Sequence((0,), (1, 1, 1))
        reward_fn = lambda s: float(sum(s.response))
        rewards = assign_rewards(gen, reward_fn, seq, ReinforceConfig(rollout_count=5), np.random.default_rng(0))
        assert rewards == [3.0, 3.0, 3.0]

    def test_rollout_mean_matches_enumeration(self, uniform_gen):
        count = 10_000
        seq = Sequence((0,), (1, 0))
        reward_fn = lambda s: float(s.response[1] == 2) + 0.5 * s.response[0]
        rewards = assign_rewards(
            uniform_gen, reward_fn, seq, ReinforceConfig(rollout_count=count), np.random.default_rng(4)
        )
        expected = np.mean([reward_fn(Sequence((0,), (1, a))) for a in range(3)])
        se = math.sqrt((2 / 9) / count)
        assert abs(rewards[0] - expected) <= 3 * se
        assert rewards[1] == reward_fn(seq)

    def test_rollout_needs_stream(self, tiny_gen):
        with pytest.raises(InvalidInputError):
            assign_rewards(tiny_gen, lambda s: 1.0, Sequence((0,), (1, 1)), ReinforceConfig(rollout_count=2))

    def test_terminal_mode_reward_to_go_is_constant(self, tiny_gen):
        trajectory = build_trajectory(
            tiny_gen,
            Sequence((0,), (2, 1)),
            assign_rewards(tiny_gen, lambda s: 0.7, Sequence((0,), (2, 1)), ReinforceConfig()),
        )
        assert trajectory.reward_to_go == [0.7, 0.7]


class TestEstimateGradient:
    """Tests for estimate_gradient()."""

    def test_zero_rewards_give_zero_gradient(self, tiny_gen):
        trajectory = build_trajectory(tiny_gen, Sequence((0,), (1, 2)), [0.0, 0.0])
        grads = estimate_gradient(tiny_gen, [trajectory])
        assert grads.congruent(tiny_gen.params)
        assert np.all(grads.flatten() == 0.0)

    def test_constant_return_scales_log_prob_gradient(self, tiny_gen):
        seq = Sequence((1,), (0, 2))
        trajectory = Trajectory(seq, [0.0, 0.0], [0.0, 1.5], [1.5, 1.5])
        grads = estimate_gradient(tiny_gen, [trajectory])
        leaves = tiny_gen.params.track()
        expected = dc.backward(log_prob_tensor(tiny_gen, leaves, seq), leaves)
        assert np.allclose(grads.flatten(), 1.5 * expected.flatten(), atol=1e-12)

    def test_batch_is_mean_of_singles(self, tiny_gen):
        trajectories = [
            build_trajectory(tiny_gen, Sequence((0,), y), [0.0, toy_reward(Sequence((0,), y))])
            for y in [(2, 0), (1, 1), (0, 2)]
        ]
        batch = estimate_gradient(tiny_gen, trajectories).flatten()
        singles = np.mean([estimate_gradient(tiny_gen, [t]).flatten() for t in trajectories], axis=0)
        assert np.allclose(batch, singles, atol=1e-12)

    def test_empty_rejected(self, tiny_gen):
        with pytest.raises(InvalidInputError):
            estimate_gradient(tiny_gen, [])


def check_unbiased(draws, seed):
    """Mean of per-trajectory estimates vs the enumerated policy gradient."""
    gen = make_gen(seed=21)
    prompt = (1,)
    per_response = {
        y: estimate_gradient(
            gen, [build_trajectory(gen, Sequence(prompt, y), [0.0, toy_reward(Sequence(prompt, y))])]
        ).flatten()
        for y in all_responses(3, 2)
    }
    rng = np.random.default_rng(seed)
    counts = {y: 0 for y in per_response}
    for _ in range(draws):
        counts[sample_response(gen, prompt, rng).response] += 1

    estimates = np.array(list(per_response.values()))
    weights = np.array([counts[y] for y in per_response], dtype=float)
    mean = weights @ estimates / draws
    var = weights @ (estimates - mean) ** 2 / (draws - 1)
    se = np.sqrt(var / draws)
    exact = exact_gradient(gen, toy_reward, prompt, 2).flatten()

    diff = np.abs(mean - exact)
    active = se > 0
    assert np.all(diff[~active] < 1e-12)
    z = diff[active] / se[active]
    assert np.mean(z <= 3) >= 0.9
    assert np.all(z <= 5)


class TestUnbiasedness:
    """The estimator's mean converges to the exact policy gradient."""

    def test_reduced_sample(self):
        check_unbiased(20_000, seed=2)

    @pytest.mark.slow
    def test_two_hundred_thousand_samples(self):
        check_unbiased(200_000, seed=3)


class TestReinforceStep:
    """Tests for reinforce_step()."""

    def test_zero_lr_leaves_params(self, tiny_gen, constant_task):
        before = tiny_gen.params.checksum()
        _, record = reinforce_step(tiny_gen, toy_reward, constant_task, ReinforceConfig(lr=0.0), stream(0, "sampling"))
        assert tiny_gen.params.checksum() == before
        assert record.phase == "gen" and record.reward_mean is not None

    def test_same_seed_same_update(self, constant_task):
        results = []
        for _ in range(2):
            gen = make_gen(seed=3)
            disc = make_disc(seed=4)
            reinforce_step(gen, disc, constant_task, ReinforceConfig(lr=0.1), stream(9, "sampling"))
            results.append(gen.params.checksum())
        assert results[0] == results[1]

    def test_worker_count_does_not_change_result(self, tiny_gen):
        cfg_one = ReinforceConfig(workers=1, rollout_count=2)
        cfg_many = ReinforceConfig(workers=4, rollout_count=2)
        prompts = [(0,), (1,), (2,), (1, 1)]
        one = sample_trajectories(tiny_gen, toy_reward, prompts, cfg_one, stream(1, "sampling"))
        many = sample_trajectories(tiny_gen, toy_reward, prompts, cfg_many, stream(1, "sampling"))
        assert one == many

    def test_rollout_mode_runs(self, tiny_gen, constant_task):
        _, record = reinforce_step(
            tiny_gen, toy_reward, constant_task, ReinforceConfig(rollout_count=3, batch_size=2), stream(0, "sampling")
        )
        assert math.isfinite(record.loss_g)

    def test_invalid_config(self, tiny_gen, constant_task):
        with pytest.raises(InvalidInputError):
            reinforce_step(tiny_gen, toy_reward, constant_task, ReinforceConfig(batch_size=0), stream(0, "sampling"))
        with pytest.raises(InvalidInputError):
            ReinforceConfig(reward_mode="clipped").validate()

    def test_exact_gradient_step_increases_target_probability(self):
        gen = make_gen(seed=30, max_response_len=1)
        reward_fn = lambda s: 1.0 if s.response == (2,) else 0.0
        before = prob_of(gen, (0,), (2,))
        gen.params.apply_update(exact_gradient(gen, reward_fn, (0,), 1), 1e-3)
        assert prob_of(gen, (0,), (2,)) > before

    def test_bandit_converges(self):
        gen = make_gen(seed=31, max_response_len=1)
        task = ConstantTask(prompt=(0,))
        reward_fn = lambda s: 1.0 if s.response == (2,) else 0.0
        rng = stream(31, "sampling")
        cfg = ReinforceConfig(batch_size=8, lr=0.5)
        for _ in range(500):
            reinforce_step(gen, reward_fn, task, cfg, rng)
        assert prob_of(gen, (0,), (2,)) > 0.9
