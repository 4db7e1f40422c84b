import numpy as np
import pytest
from scipy import special, stats

from core import ndtensor as nd
from core.errors import BadRange, EmptyDataset, ShapeMismatch
from core.latentdiff import (
    LatentDiffusion,
    SkipNet,
    ancestral_sample,
    ddim_step,
    make_schedule,
    q_sample,
    skipnet_forward,
    train_diffusion,
)
from utils.models import DiffusionConfig

# standardized data ~ N(MU, S^2) per dimension
MU, S = 1.0, 0.5


def gaussian_eps(schedule):
    """Exact noise predictor for Gaussian data."""

    def eps(h, t):
        a = schedule.alpha_bar[t]
        return np.sqrt(1.0 - a) * (h - np.sqrt(a) * MU) / (a * S ** 2 + 1.0 - a)

    return eps


@pytest.fixture
def schedule():
    return make_schedule(100, 1e-3, 0.2)


def oracle_model(schedule, mean=0.0, std=1.0):
    net = SkipNet(1, 4, 1, schedule.T, np.random.default_rng(0))
    model = LatentDiffusion(schedule, net, np.array([mean]), np.array([std]))
    model.eps = gaussian_eps(schedule)
    return model


MIXTURE_MEANS = np.array([[2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [-2.0, -2.0]])
MIXTURE_STD = 0.3


def mixture_eps(schedule):
    """Exact noise predictor for an equal-weight isotropic Gaussian mixture."""

    def eps(h, t):
        a = schedule.alpha_bar[t]
        var = a * MIXTURE_STD ** 2 + 1.0 - a
        offsets = h[:, None, :] - np.sqrt(a) * MIXTURE_MEANS[None, :, :]
        weights = special.softmax(-(offsets ** 2).sum(axis=2) / (2.0 * var), axis=1)
        return np.sqrt(1.0 - a) * (weights[:, :, None] * offsets).sum(axis=1) / var

    return eps


def mixture_model(schedule):
    net = SkipNet(2, 4, 1, schedule.T, np.random.default_rng(0))
    model = LatentDiffusion(schedule, net, np.zeros(2), np.ones(2))
    model.eps = mixture_eps(schedule)
    return model


def mean_recovery_error(draws):
    """Worst distance between a component mean and the mean of the draws nearest to it."""
    nearest = np.linalg.norm(draws[:, None, :] - MIXTURE_MEANS[None, :, :], axis=2).argmin(axis=1)
    errors = []
    for k, mean in enumerate(MIXTURE_MEANS):
        members = draws[nearest == k]
        errors.append(np.linalg.norm(members.mean(axis=0) - mean) if len(members) else np.linalg.norm(mean))
    return max(errors)


def test_schedule_of_two_steps():
    s = make_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(s.betas, [0.0, 0.1, 0.2])
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9, 0.72])


@pytest.mark.parametrize("T, start, end", [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)])
def test_schedule_rejects_bad_ranges(T, start, end):
    with pytest.raises(BadRange):
        make_schedule(T, start, end)


def test_sigma(schedule):
    for t in (1, 10, 57, 100):
        assert schedule.sigma(t, t - 1, 0.0) == 0.0
        assert schedule.sigma(t, t - 1, 1.0) ** 2 == pytest.approx(schedule.posterior_variance(t), rel=1e-9)
    assert schedule.sigma(1, 0, 1.0) == 0.0


def test_timesteps(schedule):
    pairs = schedule.timesteps(10)
    assert pairs[0] == (100, 90) and pairs[-1] == (10, 0)
    assert len(schedule.timesteps(100)) == 100
    assert schedule.timesteps(1) == [(100, 0)]
    with pytest.raises(BadRange):
        schedule.timesteps(0)
    with pytest.raises(BadRange):
        schedule.timesteps(101)


def test_q_sample(schedule):
    h0 = np.ones((3, 2))
    eps = np.full((3, 2), 2.0)
    np.testing.assert_allclose(q_sample(schedule, h0, 0, eps), h0)
    a = schedule.alpha_bar[5]
    np.testing.assert_allclose(q_sample(schedule, h0, 5, eps), np.sqrt(a) + 2.0 * np.sqrt(1.0 - a))
    mixed = q_sample(schedule, h0, np.array([0, 5, 0]), eps)
    np.testing.assert_allclose(mixed[0], 1.0)
    with pytest.raises(ShapeMismatch):
        q_sample(schedule, h0, 3, np.zeros((3, 3)))


def test_q_sample_variance(schedule):
    rng = np.random.default_rng(0)
    eps = rng.standard_normal((20000, 1))
    draws = q_sample(schedule, np.zeros((20000, 1)), 30, eps)
    assert draws.var() == pytest.approx(1.0 - schedule.alpha_bar[30], rel=0.05)


def test_deterministic_step_is_a_rescale(schedule):
    h = np.array([[0.3, -1.2]])
    out = ddim_step(schedule, h, np.zeros_like(h), 40, 20)
    np.testing.assert_allclose(out, np.sqrt(schedule.alpha_bar[20] / schedule.alpha_bar[40]) * h)


def test_deterministic_step_is_linear(schedule):
    rng = np.random.default_rng(1)
    h1, h2, e1, e2 = rng.standard_normal((4, 2, 3))
    combined = ddim_step(schedule, 2 * h1 + h2, 2 * e1 + e2, 60, 30)
    separate = 2 * ddim_step(schedule, h1, e1, 60, 30) + ddim_step(schedule, h2, e2, 60, 30)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_step_to_zero_recovers_the_clean_estimate(schedule):
    h0 = np.array([[0.5, 2.0]])
    eps = np.array([[1.0, -1.0]])
    h_t = q_sample(schedule, h0, 70, eps)
    np.testing.assert_allclose(ddim_step(schedule, h_t, eps, 70, 0), h0, atol=1e-9)


def test_step_rejects_bad_order(schedule):
    with pytest.raises(BadRange):
        ddim_step(schedule, np.zeros((1, 1)), np.zeros((1, 1)), 5, 5)
    with pytest.raises(ValueError):
        ddim_step(schedule, np.zeros((1, 1)), np.zeros((1, 1)), 5, 4, eta=1.0)


def test_skipnet_with_zero_weights_predicts_zero():
    net = SkipNet(3, 8, 2, 50, np.random.default_rng(0))
    for _, param in net.store.items():
        param.data[...] = 0.0
    out = skipnet_forward(net, np.ones((4, 3)), np.arange(1, 5))
    np.testing.assert_array_equal(out, np.zeros((4, 3)))


def test_skipnet_depends_on_time():
    net = SkipNet(3, 8, 2, 50, np.random.default_rng(0))
    h = np.ones((1, 3))
    assert not np.allclose(skipnet_forward(net, h, 1), skipnet_forward(net, h, 40))
    with pytest.raises(BadRange):
        skipnet_forward(net, h, 0)
    with pytest.raises(BadRange):
        skipnet_forward(net, h, 51)


def test_skipnet_gradients():
    net = SkipNet(3, 6, 2, 20, np.random.default_rng(0))
    h = nd.Tensor(np.random.default_rng(1).normal(size=(4, 3)))
    target = nd.Tensor(np.random.default_rng(2).normal(size=(4, 3)))
    t = np.array([1, 5, 9, 20])
    assert nd.grad_check(lambda: nd.mse(net.forward(h, t), target), net.store.values(), n_coords=96) <= 1e-4


def test_eta_one_matches_ancestral_sampling(schedule):
    model = oracle_model(schedule)
    ddim = model.sample(2000, num_steps=schedule.T, eta=1.0, seed=11)
    ancestral = ancestral_sample(schedule, gaussian_eps(schedule), 2000, 1, np.random.default_rng(12))
    assert stats.ks_2samp(ddim[:, 0], ancestral[:, 0]).pvalue > 0.01


def test_same_seed_draws_agree_step_for_step(schedule):
    model = oracle_model(schedule)
    ddim = model.sample(50, num_steps=schedule.T, eta=1.0, seed=3)
    ancestral = ancestral_sample(schedule, gaussian_eps(schedule), 50, 1, np.random.default_rng(3))
    np.testing.assert_allclose(ddim, ancestral, atol=1e-6)


def test_deterministic_sampling_recovers_the_data_distribution(schedule):
    model = oracle_model(schedule, mean=3.0, std=2.0)
    draws = model.sample(4000, num_steps=schedule.T, eta=0.0, seed=0)
    assert draws.mean() == pytest.approx(3.0 + 2.0 * MU, abs=0.1)
    assert draws.std() == pytest.approx(2.0 * S, abs=0.1)


def test_training_reduces_the_loss():
    rng = np.random.default_rng(0)
    latents = rng.normal(size=(256, 4)) @ np.array([[1.0, 0.5, 0, 0], [0, 1.0, 0, 0], [0, 0, 2.0, 0], [0, 0, 0, 0.1]]) + 5.0
    config = DiffusionConfig(T=100, beta_end=0.1, depth=2, hidden=32, epochs=30, batch_size=64, lr=1e-2, warmup_steps=0)
    model, history = train_diffusion(latents, config, seed=0)
    assert len(history) == 30
    assert np.mean(history[-5:]) < history[0]
    np.testing.assert_allclose(model.mean, latents.mean(axis=0))


def test_constant_dimension_keeps_unit_scale():
    latents = np.column_stack([np.arange(8.0), np.full(8, 2.0)])
    config = DiffusionConfig(T=10, depth=1, hidden=8, epochs=1, batch_size=4)
    model, _ = train_diffusion(latents, config)
    assert model.std[1] == 1.0


def test_training_needs_latents():
    with pytest.raises(EmptyDataset):
        train_diffusion(np.zeros((0, 4)), DiffusionConfig(T=10))


def test_sampling_is_seeded_and_restorable():
    latents = np.random.default_rng(0).normal(size=(32, 3))
    config = DiffusionConfig(T=20, depth=1, hidden=8, epochs=2, batch_size=16, steps=5)
    model, _ = train_diffusion(latents, config, seed=4)
    a = model.sample(6, num_steps=5, seed=1)
    np.testing.assert_array_equal(a, model.sample(6, num_steps=5, seed=1))
    assert not np.allclose(a, model.sample(6, num_steps=5, seed=2))

    restored = LatentDiffusion.from_state(model.state_arrays(), model.meta())
    np.testing.assert_allclose(restored.sample(6, num_steps=5, seed=1), a, atol=1e-5)


def test_mixture_component_means_are_recovered(schedule):
    model = mixture_model(schedule)
    errors = [mean_recovery_error(model.sample(2000, num_steps=schedule.T, seed=seed)) for seed in range(10)]
    assert np.mean(errors) < 0.1


def test_more_steps_never_hurt_mean_recovery(schedule):
    model = mixture_model(schedule)
    errors = [
        np.mean([mean_recovery_error(model.sample(2000, num_steps=steps, seed=seed)) for seed in range(10)])
        for steps in (1, 2, 5, 20, 100)
    ]
    assert errors[0] > 1.0
    for fewer, more in zip(errors, errors[1:]):
        assert more <= fewer + 0.01
    assert errors[-1] < 0.1
