"""Matern-5/2 kernel, grid-fit GP posterior, and expected improvement."""

import math

import numpy as np
import pytest

from bitrank.gp import (
    GpGrid,
    expected_improvement,
    fit_gp,
    gp_posterior,
    matern52,
)

SQRT5 = math.sqrt(5.0)


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        assert matern52([1.0, 2.0], [1.0, 2.0], 1.7, 0.9) == pytest.approx(1.7)

    def test_unit_distance_closed_form(self):
        expected = (1.0 + SQRT5 + 5.0 / 3.0) * math.exp(-SQRT5)
        value = matern52([0.0], [1.0], 1.0, 1.0)
        assert value == pytest.approx(expected, abs=1e-9)
        assert value == pytest.approx(0.52399, abs=1e-5)

    def test_strictly_decreasing_in_distance(self):
        values = [matern52([0.0], [d], 1.0, 1.0) for d in np.linspace(0.0, 5.0, 40)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_lengthscale_rescales_distance(self):
        assert matern52([0.0], [2.0], 1.0, 2.0) == pytest.approx(
            matern52([0.0], [1.0], 1.0, 1.0)
        )


def training_set(n=12, dim=3, seed=11):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    y = np.sin(x[:, 0]) + 0.25 * x[:, 1]
    return x, y


class TestFit:
    def test_low_noise_grid_interpolates(self):
        x, y = training_set()
        model = fit_gp(x, y, GpGrid(noise_factors=(1e-6,)))
        mu, _ = model.posterior(x)
        assert np.max(np.abs(mu - y)) < 1e-4

    def test_duplicate_inputs_still_factorize(self):
        x, y = training_set(n=6)
        x2 = np.vstack([x, x[:2]])
        y2 = np.concatenate([y, y[:2]])
        model = fit_gp(x2, y2)
        assert not model.degenerate
        mu, sigma = model.posterior(x2)
        assert np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))

    def test_single_cell_grid_selected(self):
        x, y = training_set(n=8)
        grid = GpGrid(
            lengthscale_factors=(2.0,), signal_factors=(1.0,), noise_factors=(1e-2,)
        )
        model = fit_gp(x, y, grid)
        assert model.noise_var == pytest.approx(1e-2 * float(np.var(y)))
        assert model.signal_var == pytest.approx(float(np.var(y)))

    def test_posterior_mean_near_training_targets(self):
        x, y = training_set()
        model = fit_gp(x, y)
        mu, _ = model.posterior(x)
        assert np.max(np.abs(mu - y)) < 1e-3

    def test_far_query_reverts_to_prior(self):
        x, y = training_set()
        model = fit_gp(x, y)
        mu, sigma = gp_posterior(model, np.full(3, 80.0))
        assert mu == pytest.approx(model.y_mean, abs=1e-6)
        prior_sd = math.sqrt(model.signal_var + model.noise_var)
        assert sigma == pytest.approx(prior_sd, rel=0.01)

    def test_uncertainty_smaller_near_data(self):
        x, y = training_set()
        model = fit_gp(x, y)
        _, sigma_near = gp_posterior(model, x[0])
        _, sigma_far = gp_posterior(model, np.full(3, 80.0))
        assert sigma_near < sigma_far

    def test_fewer_than_two_points_degenerate(self):
        model = fit_gp(np.array([[1.0, 2.0]]), np.array([3.0]))
        assert model.degenerate
        mu, sigma = gp_posterior(model, [0.0, 0.0])
        assert mu == pytest.approx(3.0)
        assert sigma == pytest.approx(math.sqrt(1e-8))

    def test_constant_targets_degenerate(self):
        x, _ = training_set(n=5)
        model = fit_gp(x, np.full(5, 2.5))
        assert model.degenerate
        mu, _ = gp_posterior(model, x[0])
        assert mu == pytest.approx(2.5)

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ValueError):
            fit_gp(np.zeros((3, 2)), np.zeros(4))


class TestExpectedImprovement:
    def test_mean_at_incumbent_half_sigma_value(self):
        # mu == best leaves z = 0, so EI = sigma * pdf(0).
        value = expected_improvement(1.0, 0.5, 1.0)
        assert value == pytest.approx(0.19947114020071635, abs=1e-6)

    def test_zero_sigma_collapses_to_hinge(self):
        assert expected_improvement(1.2, 0.0, 1.0) == pytest.approx(0.2)
        assert expected_improvement(0.8, 0.0, 1.0) == 0.0

    def test_monotone_in_sigma(self):
        values = [
            expected_improvement(0.9, s, 1.0) for s in np.linspace(0.01, 2.0, 25)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_dominates_hinge_lower_bound(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            mu = float(rng.normal())
            sigma = float(rng.random() * 2)
            best = float(rng.normal())
            assert expected_improvement(mu, sigma, best) >= max(mu - best, 0.0) - 1e-12

    def test_vectorized_matches_scalar(self):
        mu = np.array([0.5, 1.0, 1.5])
        sigma = np.array([0.1, 0.0, 0.3])
        out = expected_improvement(mu, sigma, 1.0)
        assert out.shape == (3,)
        for i in range(3):
            assert out[i] == pytest.approx(
                expected_improvement(float(mu[i]), float(sigma[i]), 1.0)
            )
