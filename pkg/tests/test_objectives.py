"""Losses, metrics, and histogram distances: closed forms, gradient checks
against central finite differences, and sampled distribution oracles."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fitadapt.errors import DegenerateInputError
from fitadapt.objectives import (
    Histogram,
    LossWeights,
    build_histogram,
    cross_entropy,
    gaussian_nll,
    hellinger,
    kl_divergence,
    mae,
    mse_loss,
    pearson,
    r_squared,
    shared_histograms,
    total_adapt_loss,
)

# Closed-form distances between N(0,1) and N(1,1).
GAUSS_HELLINGER = math.sqrt(1.0 - math.exp(-1.0 / 8.0))  # 0.342787...
GAUSS_KL = 0.5  # (mu difference)^2 / 2 for unit variances


class TestLossWeights:
    def test_defaults_valid(self):
        w = LossWeights()
        assert (w.alpha, w.lambda1, w.lambda2) == (0.01, 0.9, 0.1)

    def test_lambda_sum_enforced(self):
        with pytest.raises(ValueError):
            LossWeights(0.01, 0.9, 0.2)

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.5, 0.5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(0.01, 1.5, -0.5)


class TestRegressionLosses:
    def test_perfect_fit(self):
        y = [1.0, 2.0, 3.0]
        assert float(mse_loss(y, y)) == 0.0
        assert float(mae(y, y)) == 0.0

    def test_unit_residuals(self):
        assert float(mse_loss([0.0, 0.0], [1.0, 1.0])) == 1.0
        assert float(mae([0.0, 0.0], [1.0, 1.0])) == 1.0

    def test_arithmetic(self):
        assert float(mse_loss([0.0, 2.0], [0.0, 0.0])) == 2.0
        assert float(mae([0.0, 2.0], [0.0, 0.0])) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            mae([], [])


class TestCrossEntropy:
    def test_confident_correct_loss_vanishes(self):
        assert float(cross_entropy([1.0], [1.0 - 1e-9])) < 1e-5

    def test_uninformative_probability_gives_ln2(self):
        assert float(cross_entropy([1.0], [0.5])) == pytest.approx(math.log(2), abs=1e-12)
        assert float(cross_entropy([0.0], [0.5])) == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated_probability_stays_finite(self):
        assert math.isfinite(float(cross_entropy([1.0, 0.0], [0.0, 1.0])))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cross_entropy([1.0], [0.5, 0.5])


class TestGaussianNLL:
    def test_zero_residual_unit_variance(self):
        assert float(gaussian_nll([0.0], [0.0], [1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_unit_residual(self):
        assert float(gaussian_nll([1.0], [0.0], [1.0])) == pytest.approx(0.5, abs=1e-12)

    def test_closed_form(self):
        expected = 0.5 * (math.log(4.0) + 1.0)
        assert float(gaussian_nll([2.0], [0.0], [4.0])) == pytest.approx(expected, abs=1e-12)

    def test_variance_below_floor_rejected(self):
        with pytest.raises(ValueError):
            gaussian_nll([0.0], [0.0], [1e-9])

    def test_batch_mean(self):
        single = [float(gaussian_nll([t], [0.0], [1.0])) for t in (0.0, 1.0, 2.0)]
        batch = float(gaussian_nll([0.0, 1.0, 2.0], [0.0] * 3, [1.0] * 3))
        assert batch == pytest.approx(np.mean(single), abs=1e-12)


class TestTotalAdaptLoss:
    def test_eq_arithmetic(self):
        w = LossWeights(0.01, 0.9, 0.1)
        assert float(total_adapt_loss(w, 100.0, 1.0, 1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_case(self):
        w = LossWeights(0.01, 0.5, 0.5)
        assert float(total_adapt_loss(w, 0.0, 0.0, 0.0)) == 0.0

    def test_linearity_in_each_argument(self):
        rng = np.random.default_rng(3)
        w = LossWeights(0.02, 0.7, 0.3)
        for _ in range(50):
            a, b, c, d = rng.normal(size=4)
            lhs = total_adapt_loss(w, a + d, b, c)
            rhs = total_adapt_loss(w, a, b, c) + w.alpha * d
            assert float(lhs) == pytest.approx(float(rhs), abs=1e-12)
            assert float(total_adapt_loss(w, 2 * a, 2 * b, 2 * c)) == pytest.approx(
                2 * float(total_adapt_loss(w, a, b, c)), abs=1e-12
            )


def central_difference(f, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Componentwise central finite differences of a scalar function."""
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        up = float(f())
        flat[i] = orig - h
        down = float(f())
        flat[i] = orig
        grad.view(-1)[i] = (up - down) / (2 * h)
    return grad


class TestLossGradients:
    def test_gaussian_nll_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            t = torch.tensor(rng.normal(), dtype=torch.float64)
            mu = torch.tensor(rng.normal(), dtype=torch.float64, requires_grad=True)
            log_var = torch.tensor(rng.normal(), dtype=torch.float64, requires_grad=True)
            loss = gaussian_nll(t.reshape(1), mu.reshape(1), torch.exp(log_var).reshape(1) + 1e-6)
            g_mu, g_lv = torch.autograd.grad(loss, (mu, log_var))
            with torch.no_grad():
                for p, g in ((mu, g_mu), (log_var, g_lv)):
                    fd = central_difference(
                        lambda: gaussian_nll(
                            t.reshape(1), mu.reshape(1), torch.exp(log_var).reshape(1) + 1e-6
                        ),
                        p.data,
                    )
                    rel = abs(float(g) - float(fd)) / max(abs(float(fd)), 1e-8)
                    assert rel < 1e-4

    def test_cross_entropy_gradient_wrt_logits(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            y = torch.tensor([float(rng.integers(0, 2))], dtype=torch.float64)
            logit = torch.tensor(rng.normal(scale=2.0), dtype=torch.float64, requires_grad=True)
            loss = cross_entropy(y, torch.sigmoid(logit).reshape(1))
            (g,) = torch.autograd.grad(loss, logit)
            with torch.no_grad():
                fd = central_difference(
                    lambda: cross_entropy(y, torch.sigmoid(logit).reshape(1)), logit.data
                )
            rel = abs(float(g) - float(fd)) / max(abs(float(fd)), 1e-8)
            assert rel < 1e-4


class TestRegressionMetrics:
    def test_perfect_prediction(self):
        y = [1.0, 2.0, 4.0]
        assert r_squared(y, y) == 1.0
        assert pearson(y, y) == 1.0

    def test_mean_predictor_gives_zero_r2(self):
        y = np.array([1.0, 2.0, 3.0])
        yhat = np.full(3, y.mean())
        assert r_squared(y, yhat) == pytest.approx(0.0, abs=1e-12)

    def test_anticorrelated(self):
        assert r_squared([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-3.0)
        assert pearson([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-1.0)

    def test_degenerate_inputs_raise(self):
        with pytest.raises(DegenerateInputError):
            pearson([1.0, 1.0], [0.0, 1.0])
        with pytest.raises(DegenerateInputError):
            pearson([0.0, 1.0], [1.0, 1.0])
        with pytest.raises(DegenerateInputError):
            r_squared([2.0, 2.0], [0.0, 1.0])


class TestHistogram:
    def test_edges_must_increase(self):
        with pytest.raises(ValueError):
            Histogram(np.array([0.0, 0.0, 1.0]), np.array([0.5, 0.5]))

    def test_mass_must_normalize(self):
        with pytest.raises(ValueError):
            Histogram(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.6]))

    def test_uniform_sample_mass(self):
        rng = np.random.default_rng(0)
        h = build_histogram(rng.uniform(0, 1, 1000), 10, (0.0, 1.0))
        assert np.all(np.abs(h.mass - 0.1) < 0.05)

    def test_point_mass(self):
        h = build_histogram(np.full(50, 0.42), 10, (0.0, 1.0))
        assert h.mass[4] == 1.0 and h.mass.sum() == 1.0

    def test_mass_always_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            h = build_histogram(rng.normal(size=100), 7, (-1.0, 1.0))
            assert h.mass.sum() == pytest.approx(1.0, abs=1e-12)

    def test_out_of_range_clipped_to_edges(self):
        h = build_histogram([-10.0, 10.0], 4, (0.0, 1.0))
        assert h.mass[0] == 0.5 and h.mass[-1] == 0.5

    def test_empty_values_rejected(self):
        with pytest.raises(ValueError):
            build_histogram([], 5, (0.0, 1.0))

    def test_bad_range_rejected(self):
        with pytest.raises(ValueError):
            build_histogram([1.0], 5, (1.0, 1.0))


class TestHellinger:
    def test_identical_histograms(self):
        h = build_histogram([0.1, 0.5, 0.9], 4, (0.0, 1.0))
        assert hellinger(h, h) == 0.0

    def test_disjoint_support(self):
        a = build_histogram(np.full(10, 0.1), 2, (0.0, 1.0))
        b = build_histogram(np.full(10, 0.9), 2, (0.0, 1.0))
        assert hellinger(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_oracle(self):
        rng = np.random.default_rng(42)
        a = build_histogram(rng.normal(0, 1, 100_000), 200, (-6.0, 7.0))
        b = build_histogram(rng.normal(1, 1, 100_000), 200, (-6.0, 7.0))
        assert hellinger(a, b) == pytest.approx(GAUSS_HELLINGER, abs=0.01)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = build_histogram(rng.normal(0, 1, 500), 10, (-3.0, 3.0))
        b = build_histogram(rng.normal(0.5, 1.3, 500), 10, (-3.0, 3.0))
        assert hellinger(a, b) == hellinger(b, a)

    def test_mismatched_edges_rejected(self):
        a = build_histogram([0.5], 4, (0.0, 1.0))
        b = build_histogram([0.5], 4, (0.0, 2.0))
        with pytest.raises(ValueError):
            hellinger(a, b)


class TestKLDivergence:
    def test_identical_histograms_within_smoothing_floor(self):
        # One-sided smoothing of the reference makes KL(h, h) of order
        # bins * 1e-9 rather than exactly zero.
        h = build_histogram([0.1, 0.2, 0.9], 5, (0.0, 1.0))
        assert 0.0 <= kl_divergence(h, h) < 1e-9 * (h.mass.size + 1)

    def test_gaussian_oracle(self):
        rng = np.random.default_rng(42)
        a = build_histogram(rng.normal(0, 1, 100_000), 200, (-6.0, 7.0))
        b = build_histogram(rng.normal(1, 1, 100_000), 200, (-6.0, 7.0))
        assert kl_divergence(a, b) == pytest.approx(GAUSS_KL, abs=0.05)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_for_random_histograms(self, seed):
        rng = np.random.default_rng(seed)
        a = build_histogram(rng.normal(0, 1, 200), 8, (-4.0, 4.0))
        b = build_histogram(rng.normal(rng.uniform(-1, 1), 1, 200), 8, (-4.0, 4.0))
        assert kl_divergence(a, b) >= 0.0

    def test_mismatched_edges_rejected(self):
        a = build_histogram([0.5], 4, (0.0, 1.0))
        b = build_histogram([0.5], 5, (0.0, 1.0))
        with pytest.raises(ValueError):
            kl_divergence(a, b)


class TestSharedHistograms:
    def test_union_range(self):
        ha, hb = shared_histograms([0.0, 1.0], [2.0, 3.0], k_bins=6)
        assert ha.bin_edges[0] == 0.0 and ha.bin_edges[-1] == 3.0
        assert np.array_equal(ha.bin_edges, hb.bin_edges)

    def test_degenerate_union_widened(self):
        ha, hb = shared_histograms([1.0, 1.0], [1.0], k_bins=4)
        assert ha.bin_edges[0] < 1.0 < ha.bin_edges[-1]
