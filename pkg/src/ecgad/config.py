"""Pipeline configuration: JSON file -> validated dataclasses.

Unknown keys are rejected, absent keys fall back to defaults, and the fully
resolved configuration is echoed into every output directory so a run can be
replayed exactly. The beat length has a single source of truth
(preprocess.segment.d); the model section must not redeclare it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .masking import MaskConfig
from .model import ModelConfig
from .preprocess import PreprocessConfig
from .training import TrainConfig

_MODEL_KEYS = (
    "global_len",
    "widths",
    "kernel_size",
    "d_k",
    "mlp_hidden",
    "n_attributes",
    "use_mask_restore",
    "use_cross_attention",
    "use_tar",
    "use_apm",
)
_TRAIN_KEYS = ("epochs", "batch_size", "lr", "weight_decay", "betas", "eps", "grad_clip", "seed")
_MASK_KEYS = ("global_ratio", "global_regions", "local_ratio", "test_partitions", "test_block")
_LOSS_KEYS = ("alpha", "beta", "gamma")


def _require_keys(section: str, data: dict, allowed: tuple) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        # segment.d is the single source of truth for the beat length
        self.model.beat_len = self.preprocess.beat_len

    def to_dict(self) -> dict:
        p = self.preprocess
        return {
            "preprocess": {
                "filter": {"low_hz": p.low_hz, "high_hz": p.high_hz, "order": p.order},
                "notch": {"hz": p.notch_hz, "q": p.notch_q},
                "rpeak": {"refractory_s": p.refractory_s},
                "segment": {"d": p.beat_len},
                "trend": {"avg_window": p.trend_avg_window, "diff_window": p.trend_diff_window},
            },
            "mask": {k: getattr(self.mask, k) for k in _MASK_KEYS},
            "model": {
                k: (list(v) if isinstance(v := getattr(self.model, k), tuple) else v)
                for k in _MODEL_KEYS
            },
            "loss": {k: getattr(self.train, k) for k in _LOSS_KEYS},
            "train": {
                k: (list(v) if isinstance(v := getattr(self.train, k), tuple) else v)
                for k in _TRAIN_KEYS
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        _require_keys("<root>", data, ("preprocess", "mask", "model", "loss", "train"))
        cfg = cls()

        pre = data.get("preprocess", {})
        _require_keys("preprocess", pre, ("filter", "notch", "rpeak", "segment", "trend"))
        flt = pre.get("filter", {})
        _require_keys("preprocess.filter", flt, ("low_hz", "high_hz", "order"))
        notch = pre.get("notch", {})
        _require_keys("preprocess.notch", notch, ("hz", "q"))
        rpeak = pre.get("rpeak", {})
        _require_keys("preprocess.rpeak", rpeak, ("refractory_s",))
        seg = pre.get("segment", {})
        _require_keys("preprocess.segment", seg, ("d",))
        trend = pre.get("trend", {})
        _require_keys("preprocess.trend", trend, ("avg_window", "diff_window"))
        p = cfg.preprocess
        p.low_hz = float(flt.get("low_hz", p.low_hz))
        p.high_hz = float(flt.get("high_hz", p.high_hz))
        p.order = int(flt.get("order", p.order))
        p.notch_hz = float(notch.get("hz", p.notch_hz))
        p.notch_q = float(notch.get("q", p.notch_q))
        p.refractory_s = float(rpeak.get("refractory_s", p.refractory_s))
        p.beat_len = int(seg.get("d", p.beat_len))
        p.trend_avg_window = int(trend.get("avg_window", p.trend_avg_window))
        p.trend_diff_window = int(trend.get("diff_window", p.trend_diff_window))

        mask = data.get("mask", {})
        _require_keys("mask", mask, _MASK_KEYS)
        for key in _MASK_KEYS:
            if key in mask:
                setattr(cfg.mask, key, type(getattr(cfg.mask, key))(mask[key]))

        model = data.get("model", {})
        if "beat_len" in model:
            raise ConfigError("set preprocess.segment.d instead of model.beat_len")
        _require_keys("model", model, _MODEL_KEYS)
        for key in _MODEL_KEYS:
            if key in model:
                value = tuple(model[key]) if key == "widths" else model[key]
                setattr(cfg.model, key, value)

        loss = data.get("loss", {})
        _require_keys("loss", loss, _LOSS_KEYS)
        train = data.get("train", {})
        _require_keys("train", train, _TRAIN_KEYS)
        for key in _LOSS_KEYS:
            if key in loss:
                setattr(cfg.train, key, float(loss[key]))
        for key in _TRAIN_KEYS:
            if key in train:
                value = tuple(train[key]) if key == "betas" else train[key]
                setattr(cfg.train, key, value)

        cfg.model.beat_len = cfg.preprocess.beat_len
        cfg.model.validate()
        cfg.train.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def echo(self, out_dir: str | Path) -> Path:
        """Write the resolved configuration into an output directory."""
        out = Path(out_dir) / "config.resolved.json"
        out.write_text(self.to_json())
        return out
