"""Self-supervised ECG anomaly detection and localization.

Trains on normal ECGs only via multi-scale masked restoration (full signal +
single heartbeats) with cross-attention feature fusion, trend-assisted
restoration, and attribute prediction; scores test ECGs per signal point and
per record.
"""

from .bench import BenchSpec, run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .losses import LossBreakdown, loss_pred, loss_trend, loss_uncertainty, total_loss
from .masking import MaskConfig, MaskSpec, mask_global, mask_local, test_mask_partition
from .metrics import (
    MetricsReport,
    auroc,
    confusion_at,
    detection_report,
    dice,
    f1_best,
    precision_at_recall,
)
from .model import ModelConfig, RestorationModel, init_params
from .preprocess import (
    HeartbeatSegment,
    PreprocessConfig,
    butterworth_bandpass,
    detect_r_peaks,
    extract_trend,
    notch_filter,
    preprocess_record,
    segment_heartbeats,
    zscore_normalize,
)
from .records import (
    AttributeRaw,
    AttributeVector,
    EcgRecord,
    Lead,
    load_binary,
    load_csv,
    normalize_attributes,
    save_binary,
)
from .scoring import ScoreMap, score_global, score_local, score_record
from .synthetic import AnomalySpec, SynthConfig, generate_synthetic_ecg, generate_with_truth
from .training import TrainConfig, adamw_step, cosine_lr, train

__version__ = "0.1.0"
