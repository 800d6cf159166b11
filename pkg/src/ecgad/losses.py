"""Training losses: uncertainty-weighted restoration, trend restoration,
attribute prediction, and their weighted total.

All losses sum over signal points (not means), so the global/local scale
imbalance is absorbed by the trade-off weights. Inputs may be torch tensors
or numpy arrays; outputs are 0-dim tensors so gradients flow. Batched inputs
(leading dimensions) are reduced by summing the last axis and averaging the
rest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .errors import DomainError

# floor applied inside the division/log to prevent overflow early in training
SIGMA_FLOOR = 1e-6


@dataclass
class LossBreakdown:
    l_global: float
    l_local: float
    l_trend: float
    l_pred: float
    total: float
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def loss_uncertainty(x, x_hat, sigma) -> torch.Tensor:
    """Sum of (x - x_hat)^2 / sigma + log(sigma) over signal points."""
    x, x_hat, sigma = _as_tensor(x), _as_tensor(x_hat), _as_tensor(sigma)
    if x.shape != x_hat.shape or x.shape != sigma.shape:
        raise DomainError(f"shape mismatch: {tuple(x.shape)}, {tuple(x_hat.shape)}, {tuple(sigma.shape)}")
    if not bool((sigma > 0).all()):
        raise DomainError("sigma must be strictly positive")
    s = sigma.clamp_min(SIGMA_FLOOR)
    per_sample = ((x - x_hat) ** 2 / s + torch.log(s)).sum(dim=-1)
    return per_sample.mean()


def loss_trend(x_g, x_hat_t) -> torch.Tensor:
    """Squared Euclidean distance between the global signal and its trend restoration."""
    x_g, x_hat_t = _as_tensor(x_g), _as_tensor(x_hat_t)
    if x_g.shape != x_hat_t.shape:
        raise DomainError(f"shape mismatch: {tuple(x_g.shape)} vs {tuple(x_hat_t.shape)}")
    return ((x_g - x_hat_t) ** 2).sum(dim=-1).mean()


def loss_pred(y, y_hat, mask=None) -> torch.Tensor:
    """Mean squared error over present attributes.

    The divisor is the count of present (mask = 1) attributes per sample,
    which reduces to the plain 1/m mean when everything is present. An
    all-masked sample contributes 0; if every sample is all-masked a warning
    is emitted.
    """
    y, y_hat = _as_tensor(y), _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise DomainError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    if mask is None:
        mask = torch.ones_like(y)
    else:
        mask = _as_tensor(mask).to(y.dtype)
        if mask.shape != y.shape:
            raise DomainError(f"mask shape {tuple(mask.shape)} != {tuple(y.shape)}")
    counts = mask.sum(dim=-1)
    if not bool((counts > 0).any()):
        warnings.warn("loss_pred: all attributes masked, returning 0", stacklevel=2)
        return (y_hat * 0.0).sum()
    sq = ((y - y_hat) ** 2 * mask).sum(dim=-1)
    per_sample = sq / counts.clamp_min(1.0)
    return per_sample.mean()


def total_loss(
    l_global,
    l_local,
    l_trend=0.0,
    l_pred=0.0,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum; inactive terms are passed as 0 and contribute exactly 0."""
    l_global, l_local = _as_tensor(l_global), _as_tensor(l_local)
    l_trend, l_pred = _as_tensor(l_trend), _as_tensor(l_pred)
    total = l_global + alpha * l_local + beta * l_trend + gamma * l_pred
    breakdown = LossBreakdown(
        l_global=float(l_global.detach()),
        l_local=float(l_local.detach()),
        l_trend=float(l_trend.detach()),
        l_pred=float(l_pred.detach()),
        total=float(total.detach()),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
    )
    return total, breakdown
