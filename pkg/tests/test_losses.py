import math

import numpy as np
import pytest
import torch

from ecgad.errors import DomainError
from ecgad.losses import loss_pred, loss_trend, loss_uncertainty, total_loss


class TestLossUncertainty:
    def test_perfect_restoration_unit_sigma(self):
        x = np.array([0.3, -0.2, 1.0])
        assert float(loss_uncertainty(x, x, np.ones(3))) == 0.0

    def test_unit_sigma_reduces_to_sse(self, rng):
        x = rng.normal(size=200)
        x_hat = rng.normal(size=200)
        expected = float(np.sum((x - x_hat) ** 2))
        assert float(loss_uncertainty(x, x_hat, np.ones(200))) == pytest.approx(expected, abs=1e-9)

    def test_hand_value_residual_one_sigma_e(self):
        x = np.array([1.0, 1.0])
        x_hat = np.array([0.0, 0.0])
        sigma = np.array([math.e, math.e])
        assert float(loss_uncertainty(x, x_hat, sigma)) == pytest.approx(2 / math.e + 2, abs=1e-12)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(DomainError):
            loss_uncertainty(np.ones(3), np.ones(3), np.array([1.0, 0.0, 1.0]))
        with pytest.raises(DomainError):
            loss_uncertainty(np.ones(3), np.ones(3), np.array([1.0, -2.0, 1.0]))

    def test_sigma_stationary_point(self, rng):
        # per-point optimum sits at sigma* = squared residual
        x = rng.normal(size=50)
        residuals = rng.uniform(0.3, 1.0, size=50) * np.sign(rng.normal(size=50))
        x_hat = x - residuals  # squared residuals well above the sigma floor
        sigma_star = residuals**2
        base = float(loss_uncertainty(x, x_hat, sigma_star))
        up = float(loss_uncertainty(x, x_hat, sigma_star * 1.01))
        down = float(loss_uncertainty(x, x_hat, sigma_star * 0.99))
        assert up > base
        assert down > base

    def test_batched_mean_over_samples(self, rng):
        x = rng.normal(size=(4, 32))
        x_hat = rng.normal(size=(4, 32))
        sigma = np.exp(rng.normal(size=(4, 32)))
        per = [float(loss_uncertainty(x[i], x_hat[i], sigma[i])) for i in range(4)]
        batched = float(loss_uncertainty(x, x_hat, sigma))
        assert batched == pytest.approx(np.mean(per), rel=1e-12)

    def test_gradient_matches_finite_difference(self, rng):
        x = torch.tensor(rng.normal(size=16), dtype=torch.float64)
        x_hat = torch.tensor(rng.normal(size=16), dtype=torch.float64, requires_grad=True)
        sigma = torch.tensor(np.exp(rng.normal(size=16)), dtype=torch.float64, requires_grad=True)
        loss = loss_uncertainty(x, x_hat, sigma)
        loss.backward()
        eps = 1e-6
        for tensor in (x_hat, sigma):
            for i in (0, 7, 15):
                with torch.no_grad():
                    tensor[i] += eps
                    up = float(loss_uncertainty(x, x_hat, sigma))
                    tensor[i] -= 2 * eps
                    down = float(loss_uncertainty(x, x_hat, sigma))
                    tensor[i] += eps
                fd = (up - down) / (2 * eps)
                assert fd == pytest.approx(float(tensor.grad[i]), rel=1e-4)


class TestLossTrend:
    def test_identical_inputs(self):
        x = np.linspace(0, 1, 10)
        assert float(loss_trend(x, x)) == 0.0

    def test_input_gradient_matches_finite_difference(self, rng):
        x = torch.tensor(rng.normal(size=12), dtype=torch.float64)
        x_hat = torch.tensor(rng.normal(size=12), dtype=torch.float64, requires_grad=True)
        loss_trend(x, x_hat).backward()
        eps = 1e-6
        for i in (0, 5, 11):
            with torch.no_grad():
                x_hat[i] += eps
                up = float(loss_trend(x, x_hat))
                x_hat[i] -= 2 * eps
                down = float(loss_trend(x, x_hat))
                x_hat[i] += eps
            assert (up - down) / (2 * eps) == pytest.approx(float(x_hat.grad[i]), rel=1e-4)

    def test_constant_difference(self):
        assert float(loss_trend(np.full(10, 3.0), np.full(10, 1.0))) == pytest.approx(40.0)

    def test_matches_direct_recomputation(self, rng):
        a = rng.normal(size=300)
        b = rng.normal(size=300)
        assert float(loss_trend(a, b)) == pytest.approx(float(np.sum((a - b) ** 2)), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            loss_trend(np.ones(5), np.ones(6))


class TestLossPred:
    def test_equal_vectors(self):
        y = np.linspace(0, 1, 7)
        assert float(loss_pred(y, y)) == 0.0

    def test_single_unit_error_over_seven(self):
        y = np.zeros(7)
        y[0] = 1.0
        assert float(loss_pred(y, np.zeros(7))) == pytest.approx(1 / 7)

    def test_matches_direct_recomputation(self, rng):
        y = rng.uniform(size=7)
        y_hat = rng.uniform(size=7)
        assert float(loss_pred(y, y_hat)) == pytest.approx(float(np.mean((y - y_hat) ** 2)), abs=1e-12)

    def test_mask_changes_divisor(self):
        y = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        mask = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        # one unit error over two present attributes
        assert float(loss_pred(y, np.zeros(7), mask)) == pytest.approx(0.5)

    def test_all_masked_returns_zero_with_warning(self):
        with pytest.warns(UserWarning, match="all attributes masked"):
            value = loss_pred(np.ones(7), np.zeros(7), np.zeros(7))
        assert float(value) == 0.0

    def test_input_gradient_matches_finite_difference(self, rng):
        y = torch.tensor(rng.uniform(size=7), dtype=torch.float64)
        y_hat = torch.tensor(rng.uniform(size=7), dtype=torch.float64, requires_grad=True)
        mask = torch.tensor([1.0, 1, 0, 1, 0, 1, 1], dtype=torch.float64)
        loss_pred(y, y_hat, mask).backward()
        eps = 1e-6
        for i in range(7):
            with torch.no_grad():
                y_hat[i] += eps
                up = float(loss_pred(y, y_hat, mask))
                y_hat[i] -= 2 * eps
                down = float(loss_pred(y, y_hat, mask))
                y_hat[i] += eps
            fd = (up - down) / (2 * eps)
            assert fd == pytest.approx(float(y_hat.grad[i]), rel=1e-4, abs=1e-12)


class TestTotalLoss:
    def test_zero_weights_leave_global(self, rng):
        total, bd = total_loss(5.0, 2.0, 3.0, 4.0, alpha=0.0, beta=0.0, gamma=0.0)
        assert float(total) == 5.0

    def test_unit_weights_sum(self):
        total, bd = total_loss(1.0, 2.0, 3.0, 4.0)
        assert float(total) == 10.0
        assert bd.total == 10.0

    def test_breakdown_identity(self, rng):
        parts = rng.uniform(size=4)
        alpha, beta, gamma = 0.5, 2.0, 0.25
        total, bd = total_loss(*parts, alpha=alpha, beta=beta, gamma=gamma)
        expected = parts[0] + alpha * parts[1] + beta * parts[2] + gamma * parts[3]
        assert bd.total == pytest.approx(expected, abs=1e-9)
        assert float(total) == pytest.approx(expected, abs=1e-9)

    def test_inactive_flag_contributes_exactly_zero(self):
        total_with, _ = total_loss(1.0, 1.0, 0.0, 0.0)
        assert float(total_with) == 2.0

    def test_gradients_flow_through_weighted_sum(self):
        l_g = torch.tensor(1.0, requires_grad=True)
        l_l = torch.tensor(2.0, requires_grad=True)
        total, _ = total_loss(l_g, l_l, 0.0, 0.0, alpha=3.0)
        total.backward()
        assert float(l_g.grad) == 1.0
        assert float(l_l.grad) == 3.0
