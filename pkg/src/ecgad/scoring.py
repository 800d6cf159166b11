"""Test-time anomaly scoring: per-point score maps from partition-masked
restoration passes, and the per-record anomaly score.

The global branch runs K partition passes; each point's restoration and
uncertainty are taken from the single pass in which that point was masked,
so every point is scored under genuine restoration difficulty. The local
branch does the same per heartbeat on the resampled grid, then maps scores
back to original sample indices. The final map is the pointwise sum of both
branches, and the record score is its mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ScoringError, StructureError
from .masking import MaskConfig, MaskSpec, test_mask_partition
from .model import RestorationModel
from .preprocess import HeartbeatSegment, PreprocessConfig, preprocess_record, resample_linear
from .records import EcgRecord

_BATCH_CHUNK = 64


@dataclass
class ScoreMap:
    record_id: str
    lead_names: list[str]
    lead_scores: list[np.ndarray]  # S = S_g + S_l, aligned to the original samples
    anomaly_score: float  # mean of every per-point score across leads
    diagnostics: dict = field(default_factory=dict)


def _check_model(model: RestorationModel) -> None:
    for name, p in model.named_parameters():
        if not bool(torch.isfinite(p).all()):
            raise ScoringError(f"non-finite parameters in {name!r}; checkpoint unusable")


def _pad_len(n: int, stride: int) -> int:
    return (n + stride - 1) // stride * stride


def _pad_reflect(x: np.ndarray, target: int) -> np.ndarray:
    if x.size == target:
        return x
    return np.pad(x, (0, target - x.size), mode="reflect")


def _restore_passes(
    model: RestorationModel,
    x: np.ndarray,
    partitions: list[MaskSpec],
    companion_beat: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run the K partition passes for the global branch.

    Returns the assembled (x_hat, sigma) taking each point from the pass in
    which it was masked, plus the raw per-pass (K, D) restorations for
    diagnostics.
    """
    stride = model.config.stride
    padded = _pad_reflect(x, _pad_len(x.size, stride))
    if model.config.use_mask_restore:
        masks = [_pad_reflect(spec.mask.astype(np.float64), padded.size) for spec in partitions]
        for m in masks:
            m[x.size :] = 1.0  # padding is context, never masked
    else:
        masks = [np.ones(padded.size)]  # plain reconstruction: one unmasked pass

    beat = torch.tensor(np.tile(companion_beat, (len(masks), 1)), dtype=torch.float32)
    inputs = torch.tensor(np.stack([padded * m for m in masks]), dtype=torch.float32)
    with torch.no_grad():
        f_g, f_l = model.cross_attention_fuse(model.encode_global(inputs), model.encode_local(beat))
        x_hat, sigma = model.decode_global(f_g)
    x_hat = x_hat.numpy()[:, : x.size]
    sigma = sigma.numpy()[:, : x.size]

    if not model.config.use_mask_restore:
        return x_hat[0], sigma[0], x_hat, sigma
    x_asm = np.empty(x.size)
    s_asm = np.empty(x.size)
    for j, spec in enumerate(partitions):
        masked = spec.mask == 0
        x_asm[masked] = x_hat[j, masked]
        s_asm[masked] = sigma[j, masked]
    return x_asm, s_asm, x_hat, sigma


def score_global(
    x: np.ndarray,
    model: RestorationModel,
    partitions: list[MaskSpec],
    companion_beat: np.ndarray,
    trend: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Global score map: squared residual over uncertainty, plus the trend
    restoration residual when trend-assisted restoration is enabled."""
    x_hat, sigma, x_hat_passes, sigma_passes = _restore_passes(model, x, partitions, companion_beat)
    sigma = np.maximum(sigma, 1e-12)
    s_g = (x - x_hat) ** 2 / sigma
    diag = {
        "x_hat_g": x_hat,
        "sigma_g": sigma,
        "x_hat_passes": x_hat_passes,
        "sigma_passes": sigma_passes,
    }
    if model.config.use_tar:
        if trend is None:
            raise ScoringError("trend input required when use_tar is enabled")
        stride = model.config.stride
        padded_x = _pad_reflect(x, _pad_len(x.size, stride))
        padded_t = _pad_reflect(trend, padded_x.size)
        xg = torch.tensor(padded_x[None, :], dtype=torch.float32)
        xt = torch.tensor(padded_t[None, :], dtype=torch.float32)
        beat = torch.tensor(companion_beat[None, :], dtype=torch.float32)
        with torch.no_grad():
            f_g, _ = model.cross_attention_fuse(model.encode_global(xg), model.encode_local(beat))
            x_hat_t = model.trend_restore(xt, f_g).numpy()[0, : x.size]
        s_g = s_g + (x - x_hat_t) ** 2
        diag["x_hat_t"] = x_hat_t
    return s_g, diag


def _scatter_beat_scores(scores_d: np.ndarray, start: int, end: int) -> np.ndarray:
    """Map per-beat scores from the resampled grid back to [start, end).

    Each resampled point lands on its nearest original index; collisions are
    averaged, and indices no resampled point reaches (beats longer than the
    resampled length) are filled by linear interpolation between hits.
    """
    length = end - start
    d = scores_d.size
    if length == 1 or d == 1:
        return np.full(length, scores_d.mean())
    positions = np.rint(np.arange(d) * (length - 1) / (d - 1)).astype(np.int64)
    sums = np.bincount(positions, weights=scores_d, minlength=length)
    counts = np.bincount(positions, minlength=length)
    hit = counts > 0
    out = np.zeros(length)
    out[hit] = sums[hit] / counts[hit]
    if not hit.all():
        idx = np.arange(length)
        out[~hit] = np.interp(idx[~hit], idx[hit], out[hit])
    return out


def score_local(
    x: np.ndarray,
    segments: list[HeartbeatSegment],
    model: RestorationModel,
    partitions: list[MaskSpec],
) -> tuple[np.ndarray, dict]:
    """Local score map: per-heartbeat restoration scores placed at each beat's
    original position. Empty segment list yields all zeros with a diagnostic.

    The global companion for each beat has that beat's own span zeroed out;
    otherwise cross-attention can copy the beat (anomalies included) from the
    global tokens instead of restoring it from normal context.
    """
    if not segments:
        warnings.warn("score_local: no heartbeat segments, local map is zero", stacklevel=2)
        return np.zeros(x.size), {"segmentation_failed": True}
    d = model.config.beat_len
    stride = model.config.stride
    padded = _pad_reflect(x, _pad_len(x.size, stride))

    if model.config.use_mask_restore:
        masks = np.stack([spec.mask.astype(np.float64) for spec in partitions])
    else:
        masks = np.ones((1, d))
    k = masks.shape[0]
    beats = np.stack([seg.samples_resampled for seg in segments])  # (M, d)
    m = beats.shape[0]
    # rows: beat m repeated k times, each under one partition mask
    local_in = (beats[:, None, :] * masks[None, :, :]).reshape(m * k, d)
    companions = np.tile(padded, (m, 1))
    for mi, seg in enumerate(segments):
        companions[mi, seg.start_idx : seg.end_idx] = 0.0

    with torch.no_grad():
        g_tokens = model.encode_global(torch.tensor(companions, dtype=torch.float32))  # (M, T, d_k)
        x_hat = np.empty((m * k, d))
        sigma = np.empty((m * k, d))
        for lo in range(0, m * k, _BATCH_CHUNK):
            hi = min(lo + _BATCH_CHUNK, m * k)
            chunk = torch.tensor(local_in[lo:hi], dtype=torch.float32)
            g_chunk = g_tokens[torch.arange(lo, hi) // k]
            f_g, f_l = model.cross_attention_fuse(g_chunk, model.encode_local(chunk))
            xh, sg = model.decode_local(f_l)
            x_hat[lo:hi] = xh.numpy()
            sigma[lo:hi] = sg.numpy()

    s_l = np.zeros(x.size)
    for mi, seg in enumerate(segments):
        xh_rows = x_hat[mi * k : (mi + 1) * k]
        sg_rows = sigma[mi * k : (mi + 1) * k]
        if model.config.use_mask_restore:
            xh_asm = np.empty(d)
            sg_asm = np.empty(d)
            for j in range(k):
                masked = masks[j] == 0
                xh_asm[masked] = xh_rows[j, masked]
                sg_asm[masked] = sg_rows[j, masked]
        else:
            xh_asm, sg_asm = xh_rows[0], sg_rows[0]
        scores_d = (beats[mi] - xh_asm) ** 2 / np.maximum(sg_asm, 1e-12)
        s_l[seg.start_idx : seg.end_idx] += _scatter_beat_scores(
            scores_d, seg.start_idx, seg.end_idx
        )
    return s_l, {"segmentation_failed": False}


def score_record(
    record: EcgRecord,
    model: RestorationModel,
    preprocess_cfg: PreprocessConfig | None = None,
    mask_cfg: MaskConfig | None = None,
) -> ScoreMap:
    """Score every lead of a record; the record-level score is the mean of all
    per-point scores."""
    _check_model(model)
    cfg = preprocess_cfg or PreprocessConfig(beat_len=model.config.beat_len)
    if cfg.beat_len != model.config.beat_len:
        raise ScoringError(
            f"preprocess beat_len {cfg.beat_len} != checkpoint beat_len {model.config.beat_len}"
        )
    mask_cfg = mask_cfg or MaskConfig()
    prep = preprocess_record(record, cfg, allow_segmentation_failure=True)
    k = mask_cfg.test_partitions
    block = mask_cfg.test_block
    # beats are partitioned into k contiguous runs, mirroring the contiguous
    # local training mask
    partitions_d = test_mask_partition(model.config.beat_len, k, max(model.config.beat_len // k, 1))

    lead_scores = []
    diagnostics: dict = {}
    for lead in prep.leads:
        x = lead.samples
        partitions_g = test_mask_partition(x.size, k, block)
        if lead.segments:
            companion = lead.segments[0].samples_resampled
        else:
            companion = resample_linear(x, model.config.beat_len)
        trend = lead.trend if model.config.use_tar else None
        s_g, diag_g = score_global(x, model, partitions_g, companion, trend)
        s_l, diag_l = score_local(x, lead.segments, model, partitions_d)
        lead_scores.append(s_g + s_l)
        diagnostics[lead.name] = {"s_g": s_g, "s_l": s_l, **diag_g, **diag_l}

    anomaly_score = float(np.mean(np.concatenate(lead_scores)))
    return ScoreMap(
        record_id=prep.record_id,
        lead_names=[lead.name for lead in prep.leads],
        lead_scores=lead_scores,
        anomaly_score=anomaly_score,
        diagnostics=diagnostics,
    )


def write_scores_csv(path: str | Path, score_map: ScoreMap) -> None:
    """Persist a score map as `lead,index,score` rows plus a trailing `#A` line."""
    lines = ["lead,index,score"]
    for name, scores in zip(score_map.lead_names, score_map.lead_scores):
        for i, v in enumerate(scores):
            lines.append(f"{name},{i},{float(v)!r}")
    lines.append(f"#A,{float(score_map.anomaly_score)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores_csv(path: str | Path) -> tuple[dict[str, np.ndarray], float]:
    """Inverse of :func:`write_scores_csv`: per-lead score vectors plus A."""
    per_lead: dict[str, list[float]] = {}
    anomaly_score = None
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "lead,index,score":
            raise StructureError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#A,"):
                anomaly_score = float(line[3:])
                continue
            name, idx, value = line.split(",")
            per_lead.setdefault(name, []).append(float(value))
    if anomaly_score is None:
        raise StructureError(f"{path}: missing trailing #A line")
    return {k: np.asarray(v) for k, v in per_lead.items()}, anomaly_score
