"""ECG record types and file ingestion.

Two on-disk formats are supported:

* CSV: header row names the leads, one sample per row per lead column,
  values in mV.
* Binary: little-endian signed 16-bit integers, lead-interleaved frame by
  frame, with a JSON sidecar declaring ``sampling_rate_hz`` and per-lead
  ``gain`` (counts per mV) and ``baseline`` (counts). The sidecar may also
  carry ``label``, ``attributes`` and an ``annotation_path`` pointing at a
  raw 0/1 byte file (one byte per sample per lead, lead-major).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SidecarError, StructureError

VALID_LABELS = ("normal", "abnormal", "unknown")

# Attribute order is fixed; normalization spans are deliberately wider than
# healthy reference ranges so pathological values stay distinguishable
# before clamping.
ATTRIBUTE_ORDER = ("gender", "age", "heart_rate", "pr_ms", "qt_ms", "qtc_ms", "qrs_ms")
ATTRIBUTE_SPANS = {
    "gender": (0.0, 1.0),
    "age": (0.0, 100.0),
    "heart_rate": (30.0, 200.0),
    "pr_ms": (40.0, 400.0),
    "qt_ms": (200.0, 700.0),
    "qtc_ms": (200.0, 700.0),
    "qrs_ms": (20.0, 250.0),
}
N_ATTRIBUTES = len(ATTRIBUTE_ORDER)


@dataclass
class AttributeRaw:
    """Patient attributes as they appear in a report; any field may be missing."""

    gender: float | None = None  # 0 male, 1 female
    age: float | None = None  # years
    heart_rate: float | None = None  # bpm
    pr_ms: float | None = None
    qt_ms: float | None = None
    qtc_ms: float | None = None
    qrs_ms: float | None = None

    def validate(self) -> None:
        for name in ATTRIBUTE_ORDER:
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value) or value < 0:
                raise ParseError(f"attribute {name!r} must be finite and nonnegative, got {value!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ATTRIBUTE_ORDER if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeRaw":
        unknown = set(data) - set(ATTRIBUTE_ORDER)
        if unknown:
            raise SidecarError(f"unknown attribute keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items() if v is not None})


@dataclass
class AttributeVector:
    """Normalized attributes in [0, 1] plus a presence mask."""

    values: np.ndarray  # shape (7,), each in [0, 1] where mask is 1
    mask: np.ndarray  # shape (7,), 1 = present


@dataclass
class Lead:
    name: str
    samples: np.ndarray  # mV, float64
    annotation: np.ndarray | None = None  # 0/1 per sample, 1 = anomalous point


@dataclass
class EcgRecord:
    """A multi-lead sampled ECG with optional labels, annotations, attributes."""

    record_id: str
    sampling_rate_hz: float
    leads: list[Lead]
    label: str = "unknown"
    attributes: AttributeRaw | None = None

    def validate(self) -> None:
        if self.sampling_rate_hz <= 0:
            raise StructureError(f"{self.record_id}: sampling_rate_hz must be > 0")
        if self.label not in VALID_LABELS:
            raise StructureError(f"{self.record_id}: label {self.label!r} not in {VALID_LABELS}")
        if not self.leads:
            raise StructureError(f"{self.record_id}: record has no leads")
        for lead in self.leads:
            if lead.samples.size == 0:
                raise StructureError(f"{self.record_id}/{lead.name}: empty lead")
            if not np.all(np.isfinite(lead.samples)):
                raise ParseError(f"{self.record_id}/{lead.name}: non-finite samples")
            if lead.annotation is not None:
                if lead.annotation.shape != lead.samples.shape:
                    raise StructureError(
                        f"{self.record_id}/{lead.name}: annotation length "
                        f"{lead.annotation.size} != sample length {lead.samples.size}"
                    )
                if not np.isin(lead.annotation, (0, 1)).all():
                    raise ParseError(f"{self.record_id}/{lead.name}: annotation values must be 0/1")
        if self.attributes is not None:
            self.attributes.validate()

    @property
    def lead_names(self) -> list[str]:
        return [lead.name for lead in self.leads]


def normalize_attributes(raw: AttributeRaw) -> AttributeVector:
    """Map raw attributes onto [0, 1] over fixed spans, clamped; missing fields get mask 0.

    The mapping is linear per field, hence monotone nondecreasing, and
    invertible on present fields via :func:`denormalize_attributes`.
    """
    values = np.zeros(N_ATTRIBUTES)
    mask = np.zeros(N_ATTRIBUTES)
    for i, name in enumerate(ATTRIBUTE_ORDER):
        value = getattr(raw, name)
        if value is None:
            continue
        lo, hi = ATTRIBUTE_SPANS[name]
        values[i] = min(1.0, max(0.0, (float(value) - lo) / (hi - lo)))
        mask[i] = 1.0
    return AttributeVector(values=values, mask=mask)


def denormalize_attributes(vec: AttributeVector) -> AttributeRaw:
    """Inverse of :func:`normalize_attributes` for present (masked-in) fields."""
    raw = AttributeRaw()
    for i, name in enumerate(ATTRIBUTE_ORDER):
        if vec.mask[i]:
            lo, hi = ATTRIBUTE_SPANS[name]
            setattr(raw, name, lo + float(vec.values[i]) * (hi - lo))
    return raw


def load_csv(path: str | Path, sampling_rate_hz: float = 500.0) -> EcgRecord:
    """Read a CSV record: header row names leads, one sample per row per column."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StructureError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        if not names or any(not n for n in names):
            raise StructureError(f"{path}: header must name every lead")
        columns: list[list[float]] = [[] for _ in names]
        row_idx = 1
        for row in reader:
            row_idx += 1
            if len(row) != len(names):
                raise StructureError(
                    f"{path}: row {row_idx} has {len(row)} cells, expected {len(names)}"
                )
            for col_idx, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_idx}, column {names[col_idx]!r}: "
                        f"cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(
                        f"{path}: row {row_idx}, column {names[col_idx]!r}: "
                        f"non-finite value {cell!r}"
                    )
                columns[col_idx].append(value)
    if not columns[0]:
        raise ParseError(f"{path}: no samples")
    leads = [Lead(name=n, samples=np.asarray(c, dtype=np.float64)) for n, c in zip(names, columns)]
    record = EcgRecord(record_id=path.stem, sampling_rate_hz=sampling_rate_hz, leads=leads)
    record.validate()
    return record


def _read_annotation(path: Path, n_leads: int, n_samples: int) -> list[np.ndarray]:
    data = np.fromfile(path, dtype=np.uint8)
    if data.size != n_leads * n_samples:
        raise StructureError(
            f"{path}: annotation has {data.size} bytes, expected {n_leads * n_samples}"
        )
    if not np.isin(data, (0, 1)).all():
        raise ParseError(f"{path}: annotation bytes must be 0 or 1")
    return [data[i * n_samples : (i + 1) * n_samples].copy() for i in range(n_leads)]


def load_binary(signal_path: str | Path, sidecar_path: str | Path) -> EcgRecord:
    """Read an int16-LE interleaved signal file plus its JSON sidecar."""
    signal_path = Path(signal_path)
    sidecar_path = Path(sidecar_path)
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    try:
        fs = float(meta["sampling_rate_hz"])
        lead_meta = meta["leads"]
    except KeyError as exc:
        raise SidecarError(f"{sidecar_path}: missing key {exc}") from None
    if fs <= 0:
        raise SidecarError(f"{sidecar_path}: sampling_rate_hz must be > 0")
    if not lead_meta:
        raise SidecarError(f"{sidecar_path}: no leads declared")
    n_leads = len(lead_meta)

    raw_bytes = signal_path.read_bytes()
    frame_bytes = 2 * n_leads
    if len(raw_bytes) == 0 or len(raw_bytes) % frame_bytes != 0:
        raise StructureError(
            f"{signal_path}: {len(raw_bytes)} bytes is not a whole number of "
            f"{n_leads}-lead int16 frames"
        )
    raw = np.frombuffer(raw_bytes, dtype="<i2").reshape(-1, n_leads)
    n_samples = raw.shape[0]

    leads = []
    for i, lm in enumerate(lead_meta):
        gain = float(lm.get("gain", 1.0))
        baseline = float(lm.get("baseline", 0.0))
        if gain == 0:
            raise SidecarError(f"{sidecar_path}: lead {lm.get('name', i)!r} has gain 0")
        samples = (raw[:, i].astype(np.float64) - baseline) / gain
        leads.append(Lead(name=str(lm.get("name", f"lead{i}")), samples=samples))

    if "annotation_path" in meta and meta["annotation_path"]:
        ann_path = sidecar_path.parent / meta["annotation_path"]
        for lead, ann in zip(leads, _read_annotation(ann_path, n_leads, n_samples)):
            lead.annotation = ann

    attributes = None
    if meta.get("attributes"):
        attributes = AttributeRaw.from_dict(meta["attributes"])

    record = EcgRecord(
        record_id=str(meta.get("record_id", signal_path.stem)),
        sampling_rate_hz=fs,
        leads=leads,
        label=str(meta.get("label", "unknown")),
        attributes=attributes,
    )
    record.validate()
    return record


def save_binary(
    record: EcgRecord,
    signal_path: str | Path,
    sidecar_path: str | Path,
    gain: float = 1000.0,
) -> None:
    """Write a record in the binary format; round-trips within one count (1/gain mV)."""
    signal_path = Path(signal_path)
    sidecar_path = Path(sidecar_path)
    record.validate()
    n_samples = record.leads[0].samples.size
    for lead in record.leads:
        if lead.samples.size != n_samples:
            raise StructureError(f"{record.record_id}: leads have unequal lengths")

    counts = np.empty((n_samples, len(record.leads)), dtype="<i2")
    for i, lead in enumerate(record.leads):
        quantized = np.rint(lead.samples * gain)
        if np.any(np.abs(quantized) > np.iinfo(np.int16).max):
            raise StructureError(
                f"{record.record_id}/{lead.name}: samples exceed int16 range at gain {gain}"
            )
        counts[:, i] = quantized.astype("<i2")
    signal_path.write_bytes(counts.tobytes())

    meta: dict = {
        "record_id": record.record_id,
        "sampling_rate_hz": record.sampling_rate_hz,
        "leads": [{"name": lead.name, "gain": gain, "baseline": 0.0} for lead in record.leads],
        "label": record.label,
    }
    if record.attributes is not None:
        meta["attributes"] = record.attributes.to_dict()
    if any(lead.annotation is not None for lead in record.leads):
        ann_path = signal_path.with_suffix(".ann")
        blob = np.concatenate(
            [
                (lead.annotation if lead.annotation is not None else np.zeros(n_samples)).astype(
                    np.uint8
                )
                for lead in record.leads
            ]
        )
        ann_path.write_bytes(blob.tobytes())
        meta["annotation_path"] = ann_path.name
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_record(path: str | Path) -> EcgRecord:
    """Load a record by path: .csv, or .bin/.json pair (either member accepted)."""
    path = Path(path)
    if path.suffix == ".csv":
        return load_csv(path)
    if path.suffix == ".json":
        return load_binary(path.with_suffix(".bin"), path)
    return load_binary(path, path.with_suffix(".json"))


def discover_records(data_dir: str | Path) -> list[Path]:
    """All record entry paths in a directory, sorted for deterministic iteration.

    ``labels.csv`` is reserved for the record-id -> label table and skipped.
    """
    data_dir = Path(data_dir)
    paths = sorted(p for p in data_dir.glob("*.csv") if p.name != "labels.csv")
    return paths + sorted(data_dir.glob("*.bin"))
