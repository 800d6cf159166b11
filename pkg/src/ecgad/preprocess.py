"""ECG preprocessing: denoising filters, R-peak detection, beat segmentation,
normalization, and trend extraction.

All operations are pure and deterministic. Filters are applied zero-phase
(forward + reverse pass) so R-peak positions stay index-aligned with
annotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.ndimage import uniform_filter1d

from .errors import ConfigError, SegmentationError
from .records import EcgRecord

K_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def butterworth_bandpass(
    samples: np.ndarray,
    fs: float,
    low_hz: float = 0.5,
    high_hz: float = 45.0,
    order: int = 4,
) -> np.ndarray:
    """Zero-phase Butterworth bandpass; removes baseline wander and HF noise.

    Args:
        samples: single-lead signal.
        fs: sampling rate in Hz.
        low_hz / high_hz: passband edges, must satisfy 0 < low < high < fs/2.
        order: filter order, 2 or 4 (applied twice by the zero-phase pass).
    """
    if not 0 < low_hz < high_hz < fs / 2:
        raise ConfigError(f"band [{low_hz}, {high_hz}] Hz invalid for fs={fs}")
    if order not in (2, 4):
        raise ConfigError(f"order must be 2 or 4, got {order}")
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, np.asarray(samples, dtype=np.float64))


def notch_filter(samples: np.ndarray, fs: float, notch_hz: float = 50.0, q: float = 30.0) -> np.ndarray:
    """Zero-phase IIR notch for powerline interference."""
    if not 0 < notch_hz < fs / 2:
        raise ConfigError(f"notch {notch_hz} Hz outside (0, {fs / 2}) for fs={fs}")
    b, a = sps.iirnotch(notch_hz, q, fs=fs)
    return sps.filtfilt(b, a, np.asarray(samples, dtype=np.float64))


def denoise(
    samples: np.ndarray,
    fs: float,
    low_hz: float = 0.5,
    high_hz: float = 45.0,
    order: int = 4,
    notch_hz: float = 50.0,
    q: float = 30.0,
) -> np.ndarray:
    """Bandpass followed by notch; the standard cleaning chain."""
    return notch_filter(butterworth_bandpass(samples, fs, low_hz, high_hz, order), fs, notch_hz, q)


def detect_r_peaks(
    samples: np.ndarray,
    fs: float,
    refractory_s: float = 0.24,
    window_s: float = 0.75,
    k_grid: tuple = K_GRID,
) -> np.ndarray:
    """Adaptive-threshold R-peak detector (no learnable parameters).

    The threshold is a rolling mean plus k rolling standard deviations; k is
    swept over ``k_grid`` and the value whose implied beat rate is most stable
    (minimum variance of inter-peak intervals) wins. A refractory period
    suppresses double-fires on the same QRS complex.

    Returns strictly increasing sample indices. Raises SegmentationError when
    fewer than 2 peaks are found at every k.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise SegmentationError("signal too short for peak detection")
    window = max(3, int(round(window_s * fs)))
    refractory = max(1, int(round(refractory_s * fs)))

    mean = uniform_filter1d(x, size=window, mode="reflect")
    var = uniform_filter1d(x * x, size=window, mode="reflect") - mean * mean
    std = np.sqrt(np.clip(var, 0.0, None))

    best: np.ndarray | None = None
    best_key: tuple | None = None
    for k in k_grid:
        peaks, _ = sps.find_peaks(x, height=mean + k * std, distance=refractory)
        if peaks.size < 2:
            continue
        if peaks.size >= 3:
            stability = float(np.var(np.diff(peaks)))
        else:
            # one interval only: cannot judge stability, rank below any real sweep
            stability = float("inf")
        key = (stability, -int(peaks.size), k)
        if best_key is None or key < best_key:
            best_key = key
            best = peaks
    if best is None:
        raise SegmentationError("fewer than 2 R-peaks found at every threshold")
    return best.astype(np.int64)


@dataclass
class HeartbeatSegment:
    """One segmented beat, resampled to a fixed length."""

    lead_index: int
    start_idx: int  # half-open [start_idx, end_idx) in original sample indices
    end_idx: int
    samples_resampled: np.ndarray  # length d


def resample_linear(samples: np.ndarray, d: int) -> np.ndarray:
    """Linear resampling to length d, endpoints preserved."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == d:
        return x.copy()
    if x.size == 1:
        return np.full(d, x[0])
    positions = np.arange(d) * (x.size - 1) / (d - 1)
    return np.interp(positions, np.arange(x.size), x)


def segment_heartbeats(
    samples: np.ndarray,
    r_peaks: np.ndarray,
    fs: float,
    d: int = 320,
    lead_index: int = 0,
) -> list[HeartbeatSegment]:
    """Cut the lead at midpoints between adjacent R-peaks into one segment per beat.

    The segments form a disjoint exact cover of [0, len(samples)): the first
    starts at 0 and the last ends at the signal end. Each is linearly
    resampled to length d.
    """
    peaks = np.asarray(r_peaks, dtype=np.int64)
    if peaks.size < 2:
        raise SegmentationError(f"need >= 2 R-peaks to segment, got {peaks.size}")
    n = len(samples)
    mids = (peaks[:-1] + peaks[1:]) // 2
    bounds = np.concatenate(([0], mids, [n]))
    segments = []
    for start, end in zip(bounds[:-1], bounds[1:]):
        segments.append(
            HeartbeatSegment(
                lead_index=lead_index,
                start_idx=int(start),
                end_idx=int(end),
                samples_resampled=resample_linear(samples[start:end], d),
            )
        )
    return segments


def zscore_normalize(samples: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Standardize to mean 0, std 1 (std floored at 1e-8); returns (x, mean, std)."""
    x = np.asarray(samples, dtype=np.float64)
    mean = float(x.mean())
    std = max(float(x.std()), 1e-8)
    return (x - mean) / std, mean, std


def extract_trend(samples: np.ndarray, avg_window: int = 51, diff_window: int = 2) -> np.ndarray:
    """Smooth with a moving average, then differentiate across a short window.

    Emphasizes rhythm over morphology: the averaging window suppresses beat
    detail, the difference window highlights changes between consecutive
    points. Both stages are reflect-padded so output length equals input
    length.
    """
    x = np.asarray(samples, dtype=np.float64)
    if avg_window < 1 or diff_window < 2:
        raise ConfigError("avg_window must be >= 1 and diff_window >= 2")
    if x.size < avg_window or x.size < diff_window:
        raise ConfigError(f"signal of length {x.size} shorter than trend window")
    left, right = (avg_window - 1) // 2, avg_window // 2
    padded = np.pad(x, (left, right), mode="reflect")
    smooth = np.convolve(padded, np.full(avg_window, 1.0 / avg_window), mode="valid")
    # difference across the window: t[i] = smooth[i] - smooth[i - (diff_window-1)]
    lag = diff_window - 1
    padded = np.pad(smooth, (lag, 0), mode="reflect")
    return padded[lag:] - padded[:-lag]


@dataclass
class PreprocessConfig:
    low_hz: float = 0.5
    high_hz: float = 45.0
    order: int = 4
    notch_hz: float = 50.0
    notch_q: float = 30.0
    refractory_s: float = 0.24
    beat_len: int = 320  # d, fixed resampled beat length
    trend_avg_window: int = 51
    trend_diff_window: int = 2


@dataclass
class PreparedLead:
    name: str
    samples: np.ndarray  # denoised, z-scored
    mean: float
    std: float
    r_peaks: np.ndarray
    segments: list[HeartbeatSegment]
    trend: np.ndarray
    annotation: np.ndarray | None = None
    segmentation_failed: bool = False


@dataclass
class PreparedRecord:
    record_id: str
    sampling_rate_hz: float
    label: str
    leads: list[PreparedLead]
    attributes: object = None  # AttributeRaw | None


def preprocess_record(
    record: EcgRecord,
    cfg: PreprocessConfig | None = None,
    allow_segmentation_failure: bool = False,
) -> PreparedRecord:
    """Run the full per-lead chain: denoise, normalize, R-peaks, segments, trend.

    With ``allow_segmentation_failure`` the lead is kept (empty segments,
    flag set) instead of raising; scoring uses this to emit a zero local
    score map with a diagnostic.
    """
    cfg = cfg or PreprocessConfig()
    fs = record.sampling_rate_hz
    leads = []
    for li, lead in enumerate(record.leads):
        clean = denoise(lead.samples, fs, cfg.low_hz, cfg.high_hz, cfg.order, cfg.notch_hz, cfg.notch_q)
        normalized, mean, std = zscore_normalize(clean)
        try:
            r_peaks = detect_r_peaks(normalized, fs, cfg.refractory_s)
            segments = segment_heartbeats(normalized, r_peaks, fs, cfg.beat_len, lead_index=li)
            failed = False
        except SegmentationError:
            if not allow_segmentation_failure:
                raise
            r_peaks = np.empty(0, dtype=np.int64)
            segments = []
            failed = True
        trend = extract_trend(normalized, cfg.trend_avg_window, cfg.trend_diff_window)
        leads.append(
            PreparedLead(
                name=lead.name,
                samples=normalized,
                mean=mean,
                std=std,
                r_peaks=r_peaks,
                segments=segments,
                trend=trend,
                annotation=lead.annotation,
                segmentation_failed=failed,
            )
        )
    return PreparedRecord(
        record_id=record.record_id,
        sampling_rate_hz=fs,
        label=record.label,
        leads=leads,
        attributes=record.attributes,
    )
