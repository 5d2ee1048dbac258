"""Evaluation metrics for binary masks, all derived from pixel confusion
counts, plus the latency benchmark and report serialization.

Per-image metrics use a small epsilon so empty-vs-empty masks score 1.0;
dataset values are plain means over images.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor

METRIC_EPS = 1e-7
METRIC_COLUMNS = ("dsc", "miou", "recall", "precision", "accuracy", "f2")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray | Tensor, target: np.ndarray | Tensor,
              threshold: float = 0.5) -> ConfusionCounts:
    """Exact integer pixel counts; a pixel is positive iff pred >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0,1), got {threshold}")
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"confusion: shape mismatch {p.shape} vs {t.shape}")
    pos = p >= threshold
    tru = t >= 0.5
    tp = int(np.count_nonzero(pos & tru))
    fp = int(np.count_nonzero(pos & ~tru))
    fn = int(np.count_nonzero(~pos & tru))
    tn = int(np.count_nonzero(~pos & ~tru))
    return ConfusionCounts(tp, fp, fn, tn)


def metrics_from_counts(c: ConfusionCounts, eps: float = METRIC_EPS) -> dict[str, float]:
    tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
    return {
        "dsc": (2 * tp + eps) / (2 * tp + fp + fn + eps),
        "miou": (tp + eps) / (tp + fp + fn + eps),
        "recall": (tp + eps) / (tp + fn + eps),
        "precision": (tp + eps) / (tp + fp + eps),
        "accuracy": (tp + tn) / c.total,
        "f2": (5 * tp + eps) / (5 * tp + 4 * fn + fp + eps),
    }


@dataclass
class MetricReport:
    """Per-image metric rows plus means, threshold/eps bookkeeping, timing."""

    ids: list[str] = field(default_factory=list)
    rows: list[dict[str, float]] = field(default_factory=list)
    threshold: float = 0.5
    eps: float = METRIC_EPS
    mean_ms: float = 0.0
    std_ms: float = 0.0

    def add(self, image_id: str, counts: ConfusionCounts) -> None:
        self.ids.append(image_id)
        self.rows.append(metrics_from_counts(counts, self.eps))

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms if self.mean_ms > 0 else 0.0

    def mean(self) -> dict[str, float]:
        if not self.rows:
            raise ValueError("empty report")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_COLUMNS}

    # -- serialization (fixed column order) ---------------------------------

    def to_csv(self) -> str:
        lines = ["id," + ",".join(METRIC_COLUMNS)]
        for image_id, row in zip(self.ids, self.rows):
            lines.append(image_id + "," + ",".join(repr(row[k]) for k in METRIC_COLUMNS))
        mean = self.mean()
        lines.append("mean," + ",".join(repr(mean[k]) for k in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "threshold": self.threshold,
            "eps": self.eps,
            "per_image": [{"id": i, **r} for i, r in zip(self.ids, self.rows)],
            "mean": self.mean(),
            "timing": {"mean_ms": self.mean_ms, "std_ms": self.std_ms, "fps": self.fps},
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def fps_bench(forward_fn, input_shape, warmup: int = 3, iters: int = 10,
              seed: int = 0) -> tuple[float, float, float]:
    """Single-image latency: returns (mean_ms, std_ms, fps).

    `forward_fn` takes a Tensor batch of size 1. Wall-clock numbers are
    hardware-specific and only ever reported, never asserted against.
    """
    if iters < 1:
        raise ValueError("fps_bench needs iters >= 1")
    n, c, h, w = input_shape
    if n != 1:
        raise ValueError("fps_bench times single-image batches")
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((1, c, h, w), dtype=np.float32))
    for _ in range(warmup):
        forward_fn(x)
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        forward_fn(x)
        samples.append((time.perf_counter() - t0) * 1000.0)
    mean_ms = float(np.mean(samples))
    std_ms = float(np.std(samples))
    return mean_ms, std_ms, (1000.0 / mean_ms if mean_ms > 0 else 0.0)
