"""Static SVG rendering of score maps: one panel per lead, the signal trace
over a score-intensity underlay, with annotation boxes when present.

Scores are min-max normalized to [0, 1] for display only. Output bytes are
deterministic for fixed input (fixed-precision formatting, no timestamps).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import StructureError
from .records import EcgRecord

PANEL_W = 1000
PANEL_H = 140
MARGIN = 30
LEVELS = 16


def _runs(values: np.ndarray) -> list[tuple[int, int, float]]:
    """Consecutive equal-value runs as (start, end, value)."""
    out = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            out.append((start, i, float(values[start])))
            start = i
    return out


def render_svg(record: EcgRecord, lead_scores: dict[str, np.ndarray], out_path: str | Path) -> None:
    """Render the record with its per-lead score underlay to a static SVG."""
    for lead in record.leads:
        scores = lead_scores.get(lead.name)
        if scores is None:
            raise StructureError(f"no scores for lead {lead.name!r}")
        if len(scores) != len(lead.samples):
            raise StructureError(
                f"lead {lead.name!r}: {len(scores)} scores for {len(lead.samples)} samples"
            )
    all_scores = np.concatenate([lead_scores[lead.name] for lead in record.leads])
    lo, hi = float(all_scores.min()), float(all_scores.max())
    span = hi - lo if hi > lo else 1.0

    n_leads = len(record.leads)
    height = n_leads * (PANEL_H + MARGIN) + MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W + 2 * MARGIN}" '
        f'height="{height}" viewBox="0 0 {PANEL_W + 2 * MARGIN} {height}">',
        f'<rect width="{PANEL_W + 2 * MARGIN}" height="{height}" fill="white"/>',
    ]
    for li, lead in enumerate(record.leads):
        top = MARGIN + li * (PANEL_H + MARGIN)
        x = lead.samples
        n = len(x)
        norm = (lead_scores[lead.name] - lo) / span
        levels = np.minimum((norm * LEVELS).astype(int), LEVELS - 1)
        xs = np.arange(n) * PANEL_W / max(n - 1, 1) + MARGIN
        ylo, yhi = float(x.min()), float(x.max())
        yspan = yhi - ylo if yhi > ylo else 1.0
        ys = top + PANEL_H - (x - ylo) / yspan * PANEL_H

        parts.append(f'<g id="lead-{li}">')
        for start, end, level in _runs(levels):
            if level == 0:
                continue
            x0 = start * PANEL_W / max(n - 1, 1) + MARGIN
            x1 = min(end, n - 1) * PANEL_W / max(n - 1, 1) + MARGIN
            opacity = 0.75 * (level + 1) / LEVELS
            parts.append(
                f'<rect x="{x0:.2f}" y="{top}" width="{max(x1 - x0, 0.5):.2f}" '
                f'height="{PANEL_H}" fill="crimson" fill-opacity="{opacity:.3f}"/>'
            )
        if lead.annotation is not None:
            for start, end, value in _runs(lead.annotation.astype(int)):
                if value != 1:
                    continue
                x0 = start * PANEL_W / max(n - 1, 1) + MARGIN
                x1 = min(end, n - 1) * PANEL_W / max(n - 1, 1) + MARGIN
                parts.append(
                    f'<rect x="{x0:.2f}" y="{top + 1}" width="{max(x1 - x0, 0.5):.2f}" '
                    f'height="{PANEL_H - 2}" fill="none" stroke="darkred" stroke-width="1.5"/>'
                )
        points = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="black" stroke-width="0.8"/>')
        parts.append(
            f'<text x="{MARGIN}" y="{top - 8}" font-family="monospace" font-size="12">'
            f"{record.record_id} / {lead.name}</text>"
        )
        parts.append("</g>")
    parts.append("</svg>")
    Path(out_path).write_text("\n".join(parts) + "\n")
