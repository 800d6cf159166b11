"""Run manifests: input digests, config digest, seed, and artifact digests,
written by every CLI command so a run can be replayed and checked exactly."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: str | Path,
    command: str,
    inputs: list[str | Path],
    config_digest: str,
    seed: int | None,
    artifacts: list[str | Path],
    name: str = "manifest.json",
) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "seed": seed,
        "config_digest": config_digest,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "artifacts": {str(p): sha256_file(p) for p in sorted(map(str, artifacts))},
    }
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
