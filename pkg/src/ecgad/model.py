"""Restoration network: global/local convolutional encoders, single-head
cross-attention fusion with residual per-token MLPs, dual decoders with
uncertainty heads, a trend autoencoder, and an attribute predictor.

Submodule names (e_g, e_l, phi_g, phi_l, d_g, d_l, e_t, d_t, phi_p) form the
parameter tree used by the checkpoint format. All forward paths are pure and
deterministic; there is no dropout or batch normalization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

LEAKY_SLOPE = 0.2


@dataclass
class ModelConfig:
    global_len: int = 1024  # full-signal input length
    beat_len: int = 320  # resampled heartbeat length
    widths: tuple = (16, 32, 64)  # encoder channel widths, one stride-2 stage each
    kernel_size: int = 15
    d_k: int = 64  # token feature dimension
    mlp_hidden: int = 128
    n_attributes: int = 7
    use_mask_restore: bool = True
    use_cross_attention: bool = True
    use_tar: bool = True
    use_apm: bool = True

    @property
    def stride(self) -> int:
        return 2 ** len(self.widths)

    def validate(self) -> None:
        if self.d_k <= 0:
            raise ConfigError("d_k must be > 0")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if not self.widths:
            raise ConfigError("widths must be nonempty")
        for name, length in (("global_len", self.global_len), ("beat_len", self.beat_len)):
            if length % self.stride != 0:
                raise ConfigError(f"{name}={length} not divisible by encoder stride {self.stride}")

    def to_json(self) -> str:
        data = asdict(self)
        data["widths"] = list(self.widths)
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        data = json.loads(text)
        data["widths"] = tuple(data["widths"])
        return cls(**data)


class ConvEncoder(nn.Module):
    """Stack of stride-2 1-D convolutions projecting to d_k-dim tokens."""

    def __init__(self, widths: tuple, kernel_size: int, d_k: int):
        super().__init__()
        pad = (kernel_size - 1) // 2
        layers: list[nn.Module] = []
        in_ch = 1
        for w in widths:
            layers.append(nn.Conv1d(in_ch, w, kernel_size, stride=2, padding=pad))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            in_ch = w
        self.stages = nn.Sequential(*layers)
        self.proj = nn.Conv1d(in_ch, d_k, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, L) -> (B, L/stride, d_k)
        h = self.stages(x.unsqueeze(1))
        return self.proj(h).transpose(1, 2)


class ConvDecoder(nn.Module):
    """Mirror of the encoder: stride-2 transposed convolutions plus output heads.

    The restoration head is linear; the optional uncertainty head is
    exponentiated so sigma > 0 everywhere.
    """

    def __init__(self, widths: tuple, kernel_size: int, in_dim: int, with_uncertainty: bool):
        super().__init__()
        pad = (kernel_size - 1) // 2
        rev = list(reversed(widths))
        self.proj = nn.Conv1d(in_dim, rev[0], 1)
        layers: list[nn.Module] = []
        for i, w in enumerate(rev):
            out_ch = rev[i + 1] if i + 1 < len(rev) else rev[-1]
            layers.append(
                nn.ConvTranspose1d(w, out_ch, kernel_size, stride=2, padding=pad, output_padding=1)
            )
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
        self.stages = nn.Sequential(*layers)
        self.head_x = nn.Conv1d(rev[-1], 1, kernel_size, padding=pad)
        self.head_log_sigma = (
            nn.Conv1d(rev[-1], 1, kernel_size, padding=pad) if with_uncertainty else None
        )

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        # (B, T, in_dim) -> x_hat (B, T*stride) and sigma (B, T*stride) or None
        h = self.stages(self.proj(tokens.transpose(1, 2)))
        x_hat = self.head_x(h).squeeze(1)
        sigma = torch.exp(self.head_log_sigma(h).squeeze(1)) if self.head_log_sigma else None
        return x_hat, sigma


class TokenMLP(nn.Module):
    """Two-layer per-token MLP used on the cross-attention output."""

    def __init__(self, d_k: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d_k, hidden)
        self.fc2 = nn.Linear(hidden, d_k)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.leaky_relu(self.fc1(x), LEAKY_SLOPE))


class AttributeHead(nn.Module):
    """Mean-pools fused features over time, then a 2-layer MLP with sigmoid outputs."""

    def __init__(self, in_dim: int, hidden: int, n_attributes: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, n_attributes)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        pooled = tokens.mean(dim=1)
        return torch.sigmoid(self.fc2(F.leaky_relu(self.fc1(pooled), LEAKY_SLOPE)))


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Single-head softmax(QK^T / sqrt(d_k)) V."""
    d_k = q.shape[-1]
    weights = torch.softmax(q @ k.transpose(-2, -1) / d_k**0.5, dim=-1)
    return weights @ v


class RestorationModel(nn.Module):
    """The full network. Inputs are already masked where masking applies."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        w, ks, dk = config.widths, config.kernel_size, config.d_k
        self.e_g = ConvEncoder(w, ks, dk)
        self.e_l = ConvEncoder(w, ks, dk)
        self.phi_g = TokenMLP(dk, config.mlp_hidden)
        self.phi_l = TokenMLP(dk, config.mlp_hidden)
        self.d_g = ConvDecoder(w, ks, dk, with_uncertainty=True)
        self.d_l = ConvDecoder(w, ks, dk, with_uncertainty=True)
        self.e_t = ConvEncoder(w, ks, dk)
        self.d_t = ConvDecoder(w, ks, 2 * dk, with_uncertainty=False)
        self.phi_p = AttributeHead(2 * dk, config.mlp_hidden, config.n_attributes)

    def encode_global(self, masked_global: torch.Tensor) -> torch.Tensor:
        return self.e_g(masked_global)

    def encode_local(self, masked_local: torch.Tensor) -> torch.Tensor:
        return self.e_l(masked_local)

    def cross_attention_fuse(self, f_g_in: torch.Tensor, f_l_in: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Cross-attention over concatenated tokens, residual per-branch MLPs.

        With cross-attention disabled this is an exact identity bypass.
        """
        if not self.config.use_cross_attention:
            return f_g_in, f_l_in
        if f_g_in.shape[-1] != f_l_in.shape[-1]:
            raise ConfigError("global/local token dims differ")
        t_g = f_g_in.shape[1]
        qkv = torch.cat([f_g_in, f_l_in], dim=1)
        f_ca = scaled_dot_attention(qkv, qkv, qkv)
        f_g_out = f_g_in + self.phi_g(f_ca[:, :t_g])
        f_l_out = f_l_in + self.phi_l(f_ca[:, t_g:])
        return f_g_out, f_l_out

    def decode_global(self, f_g_out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x_hat, sigma = self.d_g(f_g_out)
        return x_hat, sigma

    def decode_local(self, f_l_out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x_hat, sigma = self.d_l(f_l_out)
        return x_hat, sigma

    def trend_tokens(self, x_t: torch.Tensor, f_g_out: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.e_t(x_t), f_g_out], dim=-1)

    def trend_restore(self, x_t: torch.Tensor, f_g_out: torch.Tensor) -> torch.Tensor:
        """Restore the global signal from the complete trend plus fused global features."""
        x_hat_t, _ = self.d_t(self.trend_tokens(x_t, f_g_out))
        return x_hat_t

    def predict_attributes(self, x_t: torch.Tensor, f_g_out: torch.Tensor) -> torch.Tensor:
        return self.phi_p(self.trend_tokens(x_t, f_g_out))

    def forward(
        self,
        masked_global: torch.Tensor,
        masked_local: torch.Tensor,
        trend: torch.Tensor | None = None,
    ) -> dict:
        """One full pass; trend-dependent outputs appear only when their flag is on."""
        f_g_out, f_l_out = self.cross_attention_fuse(
            self.encode_global(masked_global), self.encode_local(masked_local)
        )
        x_hat_g, sigma_g = self.decode_global(f_g_out)
        x_hat_l, sigma_l = self.decode_local(f_l_out)
        out = {
            "x_hat_g": x_hat_g,
            "sigma_g": sigma_g,
            "x_hat_l": x_hat_l,
            "sigma_l": sigma_l,
            "f_g_out": f_g_out,
        }
        needs_trend = self.config.use_tar or self.config.use_apm
        if needs_trend:
            if trend is None:
                raise ConfigError("trend input required when use_tar or use_apm is enabled")
            tokens = self.trend_tokens(trend, f_g_out)
            if self.config.use_tar:
                out["x_hat_t"] = self.d_t(tokens)[0]
            if self.config.use_apm:
                out["y_hat"] = self.phi_p(tokens)
        return out


def init_params(config: ModelConfig, seed: int) -> RestorationModel:
    """Build a model with weights ~ uniform(+-sqrt(1/fan_in)) and zero biases.

    Randomness comes from a dedicated numpy generator, so initialization is
    reproducible independent of torch's global RNG state.
    """
    model = RestorationModel(config)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                continue
            receptive = int(np.prod(param.shape[2:])) if param.dim() > 2 else 1
            fan_in = param.shape[1] * receptive
            bound = (1.0 / fan_in) ** 0.5
            values = rng.uniform(-bound, bound, size=tuple(param.shape))
            param.copy_(torch.from_numpy(values).to(param.dtype))
    return model
