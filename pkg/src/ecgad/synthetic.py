"""Synthetic ECG generation with point-true anomaly annotations.

Beats are sums of five Gaussian bumps (P, Q, R, S, T) placed at R-peak
anchors. Four anomaly injectors are available: premature_beat,
amplitude_scale, st_shift, flatline. Injected spans are recorded exactly in
the annotation vector, which makes the generator usable as a localization
oracle in tests and benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .records import AttributeRaw, EcgRecord, Lead

# (amplitude mV, width s, offset s relative to R)
DEFAULT_WAVES = {
    "p": (0.15, 0.025, -0.20),
    "q": (-0.12, 0.010, -0.035),
    "r": (1.00, 0.012, 0.0),
    "s": (-0.18, 0.011, 0.035),
    "t": (0.30, 0.055, 0.26),
}


@dataclass
class AnomalySpec:
    """One injected anomaly. Interpretation of fields depends on ``kind``.

    premature_beat: an extra beat at ``position`` (fraction of the RR gap
        after beat ``beat_index``), scaled by ``magnitude``.
    amplitude_scale: beat ``beat_index`` scaled by factor ``magnitude``.
    st_shift: constant ``magnitude`` mV added on the ST span of ``beat_index``.
    flatline: signal held constant on [position, position + duration_s) where
        ``position`` is in seconds from record start.
    """

    kind: str
    beat_index: int = 0
    position: float = 0.5
    magnitude: float = 1.0
    duration_s: float = 0.5


ANOMALY_KINDS = ("premature_beat", "amplitude_scale", "st_shift", "flatline")

# Span marked around an anomalous beat, seconds relative to its R position.
BEAT_SPAN_S = (-0.25, 0.35)
ST_SPAN_S = (0.05, 0.28)


@dataclass
class SynthConfig:
    sampling_rate_hz: float = 500.0
    duration_s: float = 10.0
    bpm: float = 60.0
    n_leads: int = 1
    noise_mv: float = 0.02
    rr_jitter: float = 0.0  # fractional std of RR spacing
    amp_jitter: float = 0.0  # fractional per-beat amplitude variation
    annotation_floor_mv: float = 0.02  # beat-level marks start where |delta| exceeds this
    waves: dict = field(default_factory=lambda: dict(DEFAULT_WAVES))
    anomalies: list[AnomalySpec] = field(default_factory=list)
    attributes: AttributeRaw | None = None


@dataclass
class SynthTruth:
    """Ground truth exposed for tests: R-peak sample indices and injected spans."""

    r_peaks: np.ndarray  # sample indices, includes premature beats
    spans: list[tuple[int, int]]  # half-open annotated index spans


def _beat_waveform(t: np.ndarray, center_s: float, waves: dict, scale: float) -> np.ndarray:
    out = np.zeros_like(t)
    for amp, width, offset in waves.values():
        out += scale * amp * np.exp(-0.5 * ((t - center_s - offset) / width) ** 2)
    return out


def generate_with_truth(config: SynthConfig, seed: int) -> tuple[EcgRecord, SynthTruth]:
    """Deterministic synthetic record plus its ground truth."""
    if config.duration_s <= 0:
        raise ConfigError(f"duration_s must be > 0, got {config.duration_s}")
    if config.bpm <= 0:
        raise ConfigError(f"bpm must be > 0, got {config.bpm}")
    if config.sampling_rate_hz <= 0:
        raise ConfigError(f"sampling_rate_hz must be > 0, got {config.sampling_rate_hz}")
    if config.n_leads < 1:
        raise ConfigError(f"n_leads must be >= 1, got {config.n_leads}")
    for spec in config.anomalies:
        if spec.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {spec.kind!r}")

    rng = np.random.default_rng(seed)
    fs = config.sampling_rate_hz
    n = int(round(config.duration_s * fs))
    t = np.arange(n) / fs

    # R anchors: first beat at rr/2, then every rr seconds (with optional
    # jitter). Beats landing within 0.1 s of the end are dropped; a truncated
    # final beat is an edge artifact, not a detectable heartbeat.
    rr = 60.0 / config.bpm
    end_margin = min(0.1, rr / 4)
    centers = []
    c = rr / 2
    while c < config.duration_s - end_margin:
        centers.append(c)
        step = rr * (1.0 + config.rr_jitter * rng.standard_normal()) if config.rr_jitter else rr
        c += max(step, 0.2 * rr)
    beat_scales = 1.0 + config.amp_jitter * rng.standard_normal(len(centers)) if config.amp_jitter else np.ones(len(centers))

    # Premature beats first: they add R anchors the other injectors can see.
    extra: list[tuple[float, float]] = []
    for spec in config.anomalies:
        if spec.kind != "premature_beat":
            continue
        i = spec.beat_index
        if not 0 <= i < len(centers) - 1:
            raise ConfigError(f"premature_beat beat_index {i} out of range")
        extra.append((centers[i] + spec.position * (centers[i + 1] - centers[i]), spec.magnitude))

    scale_by_beat = {i: 1.0 for i in range(len(centers))}
    for spec in config.anomalies:
        if spec.kind == "amplitude_scale":
            if not 0 <= spec.beat_index < len(centers):
                raise ConfigError(f"amplitude_scale beat_index {spec.beat_index} out of range")
            scale_by_beat[spec.beat_index] = spec.magnitude

    annotation = np.zeros(n, dtype=np.uint8)
    spans: list[tuple[int, int]] = []

    def mark(start_s: float, end_s: float) -> None:
        lo = max(0, int(round(start_s * fs)))
        hi = min(n, int(round(end_s * fs)))
        if hi > lo:
            annotation[lo:hi] = 1
            spans.append((lo, hi))

    def mark_deviation(delta: np.ndarray, fallback: tuple[float, float]) -> None:
        # beat-level injections are marked where they actually move the signal
        # beyond the annotation floor, not over a blanket beat window
        hot = np.abs(delta) > config.annotation_floor_mv
        if not hot.any():
            mark(*fallback)
            return
        annotation[hot] = 1
        edges = np.flatnonzero(np.diff(np.concatenate(([0], hot.view(np.int8), [0]))))
        for lo, hi in zip(edges[::2], edges[1::2]):
            spans.append((int(lo), int(hi)))

    clean = np.zeros(n)
    for i, c in enumerate(centers):
        base = _beat_waveform(t, c, config.waves, beat_scales[i])
        if scale_by_beat[i] != 1.0:
            scaled = _beat_waveform(t, c, config.waves, beat_scales[i] * scale_by_beat[i])
            clean += scaled
            mark_deviation(scaled - base, (c + BEAT_SPAN_S[0], c + BEAT_SPAN_S[1]))
        else:
            clean += base
    for c, mag in extra:
        delta = _beat_waveform(t, c, config.waves, mag)
        clean += delta
        mark_deviation(delta, (c + BEAT_SPAN_S[0], c + BEAT_SPAN_S[1]))

    for spec in config.anomalies:
        if spec.kind == "st_shift":
            if not 0 <= spec.beat_index < len(centers):
                raise ConfigError(f"st_shift beat_index {spec.beat_index} out of range")
            c = centers[spec.beat_index]
            lo = int(round((c + ST_SPAN_S[0]) * fs))
            hi = min(n, int(round((c + ST_SPAN_S[1]) * fs)))
            clean[lo:hi] += spec.magnitude
            mark(c + ST_SPAN_S[0], c + ST_SPAN_S[1])

    # Flatline last so it overrides everything inside its span.
    for spec in config.anomalies:
        if spec.kind == "flatline":
            lo = int(round(spec.position * fs))
            hi = min(n, lo + int(round(spec.duration_s * fs)))
            if not 0 <= lo < hi:
                raise ConfigError(f"flatline span [{lo}, {hi}) out of range")
            clean[lo:hi] = clean[lo]
            mark(spec.position, spec.position + spec.duration_s)

    all_centers = sorted(centers + [c for c, _ in extra])
    r_peaks = np.asarray([int(round(c * fs)) for c in all_centers if c * fs < n], dtype=np.int64)

    leads = []
    for li in range(config.n_leads):
        lead_gain = 1.0 if li == 0 else 0.6 + 0.4 * ((li * 2654435761) % 97) / 96.0
        samples = clean * lead_gain + config.noise_mv * rng.standard_normal(n)
        leads.append(Lead(name=f"lead{li}", samples=samples, annotation=annotation.copy()))

    label = "abnormal" if config.anomalies else "normal"
    attributes = config.attributes
    if attributes is None:
        attributes = AttributeRaw(
            gender=float(rng.integers(0, 2)),
            age=float(np.round(rng.uniform(20, 90), 1)),
            heart_rate=config.bpm,
            pr_ms=float(np.round(165 + 8 * rng.standard_normal(), 1)),
            qt_ms=float(np.round(385 + 15 * rng.standard_normal(), 1)),
            qtc_ms=float(np.round((385 + 15 * rng.standard_normal()) / np.sqrt(rr), 1)),
            qrs_ms=float(np.round(92 + 6 * rng.standard_normal(), 1)),
        )
    record = EcgRecord(
        record_id=f"synth-{seed}",
        sampling_rate_hz=fs,
        leads=leads,
        label=label,
        attributes=attributes,
    )
    record.validate()
    return record, SynthTruth(r_peaks=r_peaks, spans=spans)


def generate_synthetic_ecg(config: SynthConfig, seed: int) -> EcgRecord:
    """Deterministic synthetic record; annotation marks exactly the injected spans."""
    record, _ = generate_with_truth(config, seed)
    return record
