"""Training loop over normal ECGs: cosine learning-rate schedule, hand-rolled
AdamW with decoupled weight decay, per-epoch checkpointing, deterministic
replay.

Each training sample is one (record, lead) with a single uniformly chosen
heartbeat and freshly drawn masks; an epoch is one shuffled pass over the
records. All randomness flows from one numpy SeedSequence, so a fixed seed
fully determines the checkpoint byte stream.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ConfigError, ContaminationError, SegmentationError
from .losses import loss_pred, loss_trend, loss_uncertainty, total_loss
from .masking import MaskConfig, mask_global, mask_local
from .model import ModelConfig, RestorationModel, init_params
from .preprocess import PreparedRecord, PreprocessConfig, preprocess_record
from .records import EcgRecord, N_ATTRIBUTES, normalize_attributes

HISTORY_FIELDS = ("epoch", "l_global", "l_local", "l_trend", "l_pred", "total", "lr")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 5.0
    alpha: float = 1.0  # local loss weight
    beta: float = 1.0  # trend loss weight
    gamma: float = 1.0  # attribute loss weight
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Single-cycle cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def init_adam_state(params: dict[str, torch.Tensor]) -> dict:
    return {
        "step": 0,
        "m": {k: torch.zeros_like(p) for k, p in params.items()},
        "v": {k: torch.zeros_like(p) for k, p in params.items()},
    }


def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor | None],
    state: dict,
    lr: float,
    weight_decay: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, torch.Tensor], dict]:
    """One AdamW update, in place. Decay is decoupled from the adaptive step.

    If any gradient is non-finite the whole step is skipped (params and state
    untouched) and a diagnostic warning is emitted. Parameters whose gradient
    is None are left alone entirely.
    """
    for name, g in grads.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            warnings.warn(f"adamw_step: non-finite gradient in {name!r}, step skipped", stacklevel=2)
            return params, state
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if weight_decay:
                p.mul_(1.0 - lr * weight_decay)
            m, v = state["m"][name], state["v"][name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)
    return params, state


def clip_grad_norm(grads: dict[str, torch.Tensor | None], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float((g.detach() ** 2).sum())
    norm = total**0.5
    if math.isfinite(norm) and norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            if g is not None:
                g.mul_(scale)
    return norm


@dataclass
class TrainResult:
    model: RestorationModel
    history: list[dict]
    skipped: list[str] = field(default_factory=list)


def _attribute_targets(record: PreparedRecord) -> tuple[np.ndarray, np.ndarray]:
    if record.attributes is None:
        return np.zeros(N_ATTRIBUTES), np.zeros(N_ATTRIBUTES)
    vec = normalize_attributes(record.attributes)
    return vec.values, vec.mask


def train(
    records: list[EcgRecord],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    preprocess_cfg: PreprocessConfig | None = None,
    mask_cfg: MaskConfig | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Fit the restoration model on normal records only.

    Raises ContaminationError if any record is not labeled normal. Records
    whose R-peak detection fails are skipped with a diagnostic. Checkpoints
    are rewritten every epoch when ``checkpoint_path`` is given.
    """
    train_cfg.validate()
    model_cfg.validate()
    preprocess_cfg = preprocess_cfg or PreprocessConfig(beat_len=model_cfg.beat_len)
    mask_cfg = mask_cfg or MaskConfig()
    if preprocess_cfg.beat_len != model_cfg.beat_len:
        raise ConfigError(
            f"preprocess beat_len {preprocess_cfg.beat_len} != model beat_len {model_cfg.beat_len}"
        )
    if not records:
        raise ConfigError("training dataset is empty")
    contaminated = [r.record_id for r in records if r.label != "normal"]
    if contaminated:
        raise ContaminationError(
            f"training set contains non-normal records: {contaminated[:5]}"
            + ("..." if len(contaminated) > 5 else "")
        )

    prepared: list[PreparedRecord] = []
    skipped: list[str] = []
    for record in records:
        try:
            prep = preprocess_record(record, preprocess_cfg)
        except SegmentationError as exc:
            warnings.warn(f"skipping {record.record_id}: {exc}", stacklevel=2)
            skipped.append(record.record_id)
            continue
        for lead in prep.leads:
            if lead.samples.size != model_cfg.global_len:
                raise ConfigError(
                    f"{record.record_id}/{lead.name}: length {lead.samples.size} != "
                    f"model global_len {model_cfg.global_len}"
                )
        prepared.append(prep)
    if not prepared:
        raise ConfigError("no trainable records after preprocessing")

    seed_init, seed_loop = np.random.SeedSequence(train_cfg.seed).spawn(2)
    model = init_params(model_cfg, seed_init)
    rng = np.random.default_rng(seed_loop)

    params = dict(model.named_parameters())
    state = init_adam_state(params)
    n = len(prepared)
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    needs_trend = model_cfg.use_tar or model_cfg.use_apm

    history: list[dict] = []
    global_step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {k: 0.0 for k in ("l_global", "l_local", "l_trend", "l_pred", "total")}
        n_finite = 0
        lr = train_cfg.lr
        for start in range(0, n, train_cfg.batch_size):
            idxs = order[start : start + train_cfg.batch_size]
            xg, xl, xt, ys, ymask = [], [], [], [], []
            for i in idxs:
                prep = prepared[i]
                lead = prep.leads[int(rng.integers(len(prep.leads)))]
                beat = lead.segments[int(rng.integers(len(lead.segments)))]
                if model_cfg.use_mask_restore:
                    mg = mask_global(
                        model_cfg.global_len,
                        mask_cfg.global_ratio,
                        mask_cfg.global_regions,
                        seed=int(rng.integers(2**63)),
                    ).mask
                    ml = mask_local(
                        model_cfg.beat_len, mask_cfg.local_ratio, seed=int(rng.integers(2**63))
                    ).mask
                else:
                    mg = np.ones(model_cfg.global_len, dtype=np.uint8)
                    ml = np.ones(model_cfg.beat_len, dtype=np.uint8)
                xg.append((lead.samples * mg, lead.samples))
                xl.append((beat.samples_resampled * ml, beat.samples_resampled))
                if needs_trend:
                    xt.append(lead.trend)
                y, m = _attribute_targets(prep)
                ys.append(y)
                ymask.append(m)

            xg_masked = torch.tensor(np.stack([a for a, _ in xg]), dtype=torch.float32)
            xg_full = torch.tensor(np.stack([b for _, b in xg]), dtype=torch.float32)
            xl_masked = torch.tensor(np.stack([a for a, _ in xl]), dtype=torch.float32)
            xl_full = torch.tensor(np.stack([b for _, b in xl]), dtype=torch.float32)
            trend = torch.tensor(np.stack(xt), dtype=torch.float32) if needs_trend else None

            out = model(xg_masked, xl_masked, trend)
            l_global = loss_uncertainty(xg_full, out["x_hat_g"], out["sigma_g"])
            l_local = loss_uncertainty(xl_full, out["x_hat_l"], out["sigma_l"])
            l_tr = (
                loss_trend(xg_full, out["x_hat_t"])
                if model_cfg.use_tar
                else torch.zeros((), dtype=torch.float32)
            )
            if model_cfg.use_apm:
                y_t = torch.tensor(np.stack(ys), dtype=torch.float32)
                m_t = torch.tensor(np.stack(ymask), dtype=torch.float32)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")  # attribute-less batches are fine here
                    l_pr = loss_pred(y_t, out["y_hat"], m_t)
            else:
                l_pr = torch.zeros((), dtype=torch.float32)
            total, breakdown = total_loss(
                l_global, l_local, l_tr, l_pr, train_cfg.alpha, train_cfg.beta, train_cfg.gamma
            )

            model.zero_grad(set_to_none=True)
            total.backward()
            grads = {k: p.grad for k, p in params.items()}
            lr = cosine_lr(global_step, total_steps, train_cfg.lr)
            clip_grad_norm(grads, train_cfg.grad_clip)
            adamw_step(params, grads, state, lr, train_cfg.weight_decay, train_cfg.betas, train_cfg.eps)
            global_step += 1

            # keep the history finite: a NaN step is skipped by adamw_step
            # above and excluded from the epoch mean here
            if math.isfinite(breakdown.total):
                for key in sums:
                    sums[key] += getattr(breakdown, key)
                n_finite += 1

        row = {k: sums[k] / max(n_finite, 1) for k in sums}
        row["epoch"] = epoch
        row["lr"] = lr
        history.append(row)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model)
    return TrainResult(model=model, history=history, skipped=skipped)


def write_history_csv(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})
