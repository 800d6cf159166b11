"""Command-line entry point.

Subcommands: preprocess, train, score, evaluate, plot, synth. Every command
echoes the resolved configuration and writes a manifest (input/artifact
digests plus seed) into its output directory. ECGAD_THREADS caps worker
parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import errors
from .bench import BenchSpec, emit_dataset, make_dataset, run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .manifest import write_manifest
from .metrics import add_localization, detection_report
from .plotting import render_svg
from .preprocess import preprocess_record
from .records import discover_records, load_record, save_binary, EcgRecord, Lead
from .scoring import read_scores_csv, score_record, write_scores_csv
from .training import train, write_history_csv

log = logging.getLogger("ecgad")

EXIT_CODES = {
    errors.ConfigError: 2,
    errors.ParseError: 3,
    errors.StructureError: 3,
    errors.SidecarError: 3,
    errors.SegmentationError: 4,
    errors.ContaminationError: 5,
    errors.DomainError: 6,
    errors.ScoringError: 7,
}

FLAG_NAMES = {"mr": "use_mask_restore", "mc": "use_cross_attention", "tar": "use_tar", "apm": "use_apm"}


def _apply_flags(cfg: PipelineConfig, flags: str | None) -> None:
    if flags is None:
        return
    wanted = {f.strip() for f in flags.split(",") if f.strip()}
    unknown = wanted - set(FLAG_NAMES)
    if unknown:
        raise errors.ConfigError(f"unknown flags: {sorted(unknown)}; valid: mr,mc,tar,apm")
    for short, attr in FLAG_NAMES.items():
        setattr(cfg.model, attr, short in wanted)


def _load_records(data_dir: str) -> list:
    paths = discover_records(data_dir)
    if not paths:
        raise errors.StructureError(f"no records found in {data_dir}")
    return [load_record(p) for p in paths]


def _config_digest(cfg: PipelineConfig) -> str:
    import hashlib

    return hashlib.sha256(cfg.to_json().encode()).hexdigest()


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = discover_records(args.data_dir)
    if not paths:
        raise errors.StructureError(f"no records found in {args.data_dir}")
    skipped = []
    artifacts = []
    for path in paths:
        record = load_record(path)
        try:
            prep = preprocess_record(record, cfg.preprocess)
        except errors.EcgadError as exc:
            log.warning("skipping %s: %s", record.record_id, exc)
            skipped.append(f"{record.record_id}\t{exc}")
            continue
        clean = EcgRecord(
            record_id=prep.record_id,
            sampling_rate_hz=prep.sampling_rate_hz,
            leads=[
                Lead(name=lead.name, samples=lead.samples, annotation=lead.annotation)
                for lead in prep.leads
            ],
            label=prep.label,
            attributes=prep.attributes,
        )
        base = out_dir / record.record_id
        save_binary(clean, base.with_suffix(".bin"), base.with_suffix(".json"))
        arrays = {}
        for li, lead in enumerate(prep.leads):
            arrays[f"lead{li}_r_peaks"] = lead.r_peaks
            arrays[f"lead{li}_trend"] = lead.trend
            arrays[f"lead{li}_bounds"] = np.asarray(
                [[seg.start_idx, seg.end_idx] for seg in lead.segments], dtype=np.int64
            )
            arrays[f"lead{li}_beats"] = (
                np.stack([seg.samples_resampled for seg in lead.segments])
                if lead.segments
                else np.zeros((0, cfg.preprocess.beat_len))
            )
        np.savez(base.with_suffix(".prep.npz"), **arrays)
        artifacts += [base.with_suffix(".bin"), base.with_suffix(".json"), base.with_suffix(".prep.npz")]
    (out_dir / "skipped.txt").write_text("".join(line + "\n" for line in skipped))
    cfg.echo(out_dir)
    write_manifest(
        out_dir,
        command="preprocess",
        inputs=paths,
        config_digest=_config_digest(cfg),
        seed=None,
        artifacts=artifacts + [out_dir / "skipped.txt"],
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    _apply_flags(cfg, args.flags)
    if args.seed is not None:
        cfg.train.seed = args.seed
    records = _load_records(args.data_dir)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result = train(
        records,
        cfg.model,
        cfg.train,
        preprocess_cfg=cfg.preprocess,
        mask_cfg=cfg.mask,
        checkpoint_path=out_path,
    )
    save_checkpoint(out_path, result.model)
    history_path = out_path.with_suffix(".history.csv")
    write_history_csv(history_path, result.history)
    cfg.echo(out_path.parent)
    write_manifest(
        out_path.parent,
        command="train",
        inputs=discover_records(args.data_dir),
        config_digest=_config_digest(cfg),
        seed=cfg.train.seed,
        artifacts=[out_path, history_path],
    )
    log.info("trained %d epochs, final total loss %.4f", len(result.history), result.history[-1]["total"])
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise errors.StructureError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    cfg.preprocess.beat_len = model.config.beat_len
    records = _load_records(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for record in records:
        score_map = score_record(record, model, cfg.preprocess, cfg.mask)
        path = out_dir / f"{record.record_id}.scores.csv"
        write_scores_csv(path, score_map)
        artifacts.append(path)
    cfg.echo(out_dir)
    write_manifest(
        out_dir,
        command="score",
        inputs=[ckpt] + discover_records(args.data_dir),
        config_digest=_config_digest(cfg),
        seed=None,
        artifacts=artifacts,
    )
    return 0


def _read_labels(path: str) -> dict[str, int]:
    labels = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "record_id":
                continue
            if len(row) != 2 or row[1] not in ("normal", "abnormal"):
                raise errors.ParseError(f"{path}: bad label row {row!r}")
            labels[row[0]] = 1 if row[1] == "abnormal" else 0
    if not labels:
        raise errors.ParseError(f"{path}: no labels")
    return labels


def cmd_evaluate(args: argparse.Namespace) -> int:
    labels_by_id = _read_labels(args.labels)
    score_files = sorted(Path(args.scores).glob("*.scores.csv"))
    if not score_files:
        raise errors.StructureError(f"no *.scores.csv files in {args.scores}")
    record_scores, record_labels = [], []
    point_scores, point_labels = [], []
    for path in score_files:
        record_id = path.name.removesuffix(".scores.csv")
        if record_id not in labels_by_id:
            raise errors.ParseError(f"no label for scored record {record_id!r}")
        per_lead, anomaly_score = read_scores_csv(path)
        record_scores.append(anomaly_score)
        record_labels.append(labels_by_id[record_id])
        if args.annotations:
            sidecar = Path(args.annotations) / f"{record_id}.json"
            if sidecar.exists():
                record = load_record(sidecar)
                for lead in record.leads:
                    scores = per_lead.get(lead.name)
                    if scores is None or len(scores) != len(lead.samples):
                        raise errors.StructureError(
                            f"{record_id}/{lead.name}: score/annotation length mismatch"
                        )
                    point_scores.append(scores)
                    ann = lead.annotation if lead.annotation is not None else np.zeros(len(scores))
                    point_labels.append(ann)
    report = detection_report(np.asarray(record_scores), np.asarray(record_labels))
    if point_scores:
        add_localization(report, np.concatenate(point_scores), np.concatenate(point_labels))
    report.write(args.out)
    out_dir = Path(args.out).parent
    write_manifest(
        out_dir,
        command="evaluate",
        inputs=[args.labels] + score_files,
        config_digest="",
        seed=None,
        artifacts=[args.out],
    )
    print(report.to_json())
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    record = load_record(args.record)
    per_lead, _ = read_scores_csv(args.scores)
    render_svg(record, per_lead, args.out)
    write_manifest(
        Path(args.out).parent,
        command="plot",
        inputs=[args.scores, args.record],
        config_digest="",
        seed=None,
        artifacts=[args.out],
        name=Path(args.out).name + ".manifest.json",
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = BenchSpec.load(args.spec) if args.spec else BenchSpec()
    if args.seed is not None:
        spec.seed = args.seed
    out_dir = Path(args.out_dir)
    if args.data_only:
        train_records, test_records = make_dataset(spec)
        artifacts = emit_dataset(train_records, out_dir / "data" / "train")
        artifacts += emit_dataset(test_records, out_dir / "data" / "test")
        labels_path = out_dir / "data" / "labels.csv"
        with open(labels_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["record_id", "label"])
            for record in train_records + test_records:
                writer.writerow([record.record_id, record.label])
        write_manifest(
            out_dir,
            command="synth",
            inputs=[args.spec] if args.spec else [],
            config_digest="",
            seed=spec.seed,
            artifacts=artifacts + [labels_path],
        )
        return 0
    report = run_bench(spec, out_dir)
    print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgad", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="denoise, segment and cache records")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit the restoration model on normal records")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--flags", default=None, help="comma list of mr,mc,tar,apm to enable")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-point anomaly scores for records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute the metrics report from score files")
    p.add_argument("--scores", required=True, help="directory of *.scores.csv")
    p.add_argument("--labels", required=True, help="CSV of record_id,label")
    p.add_argument("--annotations", default=None, help="directory of record sidecars")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render a score map to SVG")
    p.add_argument("--scores", required=True, help="scores CSV for one record")
    p.add_argument("--record", required=True, help="record path (.csv/.bin/.json)")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth", help="emit a synthetic benchmark (and run it)")
    p.add_argument("--spec", default=None, help="bench spec JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data-only", action="store_true", help="emit the dataset and stop")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("ECGAD_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except errors.EcgadError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CODES.get(type(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
