"""Tracking metrics: center-location error, IoU, PR/SR and tag breakdowns.

PR counts frames whose CLE is strictly below 20 px; SR counts frames whose
IoU strictly exceeds 0.5.  Both are percentages.  Boundary frames (CLE
exactly 20, IoU exactly 0.5) do not count — the thresholds are strict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ctp import BBox

PR_TAU_PX = 20.0
SR_TAU_IOU = 0.5


def cle(pred: BBox, gt: BBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return float(np.hypot(pred.cx - gt.cx, pred.cy - gt.cy))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of axis-aligned center-parameterized boxes.

    Zero-area boxes give 0; negative dimensions are rejected as data errors.
    """
    if a.w < 0 or a.h < 0 or b.w < 0 or b.h < 0:
        raise ValueError("iou: negative box dimensions")
    ix = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    iy = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass
class TrackRun:
    """Aligned predicted and ground-truth boxes plus per-frame tags."""

    pred: list[BBox]
    gt: list[BBox]
    tags: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.pred:
            raise ValueError("TrackRun: empty run")
        if len(self.pred) != len(self.gt):
            raise ValueError(
                f"TrackRun: {len(self.pred)} predictions vs {len(self.gt)} ground truths"
            )
        if not self.tags:
            self.tags = [[] for _ in self.pred]
        if len(self.tags) != len(self.pred):
            raise ValueError("TrackRun: tags misaligned with frames")

    def __len__(self) -> int:
        return len(self.pred)


def precision_rate(run: TrackRun, tau: float = PR_TAU_PX) -> float:
    hits = sum(1 for p, g in zip(run.pred, run.gt) if cle(p, g) < tau)
    return 100.0 * hits / len(run)


def success_rate(run: TrackRun, tau: float = SR_TAU_IOU) -> float:
    hits = sum(1 for p, g in zip(run.pred, run.gt) if iou(p, g) > tau)
    return 100.0 * hits / len(run)


@dataclass(frozen=True)
class MetricRow:
    pr: float
    sr: float
    n: int


def _subset_row(run: TrackRun, idx: list[int]) -> MetricRow:
    sub = TrackRun(
        pred=[run.pred[i] for i in idx],
        gt=[run.gt[i] for i in idx],
        tags=[run.tags[i] for i in idx],
    )
    return MetricRow(pr=precision_rate(sub), sr=success_rate(sub), n=len(idx))


def tag_breakdown(run: TrackRun) -> dict[str, MetricRow]:
    """PR/SR per tag, plus an 'all' row over every frame.

    A frame may carry several tags and then counts toward each of them.
    """
    table = {"all": _subset_row(run, list(range(len(run))))}
    for tag in sorted({t for tags in run.tags for t in tags}):
        idx = [i for i, tags in enumerate(run.tags) if tag in tags]
        table[tag] = _subset_row(run, idx)
    return table


def metrics_csv(sequence: str, run: TrackRun) -> str:
    """CSV with columns (sequence, tag, PR, SR, N); 'all' row first."""
    table = tag_breakdown(run)
    lines = ["sequence,tag,PR,SR,N"]
    for tag in ["all"] + sorted(t for t in table if t != "all"):
        row = table[tag]
        lines.append(f"{sequence},{tag},{row.pr:.4f},{row.sr:.4f},{row.n}")
    return "\n".join(lines) + "\n"


def metrics_summary(sequence: str, run: TrackRun) -> str:
    """JSON summary of the same table (stable key order, no timestamps)."""
    table = tag_breakdown(run)
    payload = {
        "sequence": sequence,
        "frames": len(run),
        "tags": {
            tag: {"PR": row.pr, "SR": row.sr, "N": row.n}
            for tag, row in table.items()
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
