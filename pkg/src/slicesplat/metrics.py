"""Image-space quality metrics: PSNR, SSIM, Dice, IoU.

All metrics assume grayscale images on unit dynamic range.  Dice and IoU
operate on binary masks; grayscale inputs are binarized at a configurable
threshold first.  Per-frame results aggregate into a :class:`MetricReport`
with mean and standard deviation per metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ssim import ssim

DEFAULT_MASK_THRESHOLD = 0.5


def _check_dims(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range.

    Returns ``inf`` when the images are identical.
    """
    a, b = _check_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def binarize(img, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Boolean mask of pixels strictly above ``threshold``."""
    return np.asarray(img, dtype=float) > threshold


def dice(a_mask, b_mask, threshold: float = DEFAULT_MASK_THRESHOLD) -> float:
    """Dice overlap ``2|A.B| / (|A| + |B|)``; 1 when both masks are empty."""
    a, b = _check_dims(a_mask, b_mask)
    a = binarize(a, threshold)
    b = binarize(b, threshold)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(a_mask, b_mask, threshold: float = DEFAULT_MASK_THRESHOLD) -> float:
    """Intersection over union; 1 when both masks are empty."""
    a, b = _check_dims(a_mask, b_mask)
    a = binarize(a, threshold)
    b = binarize(b, threshold)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


_METRIC_FUNCS = {"psnr": psnr, "ssim": ssim, "dice": dice, "iou": iou}


@dataclass
class MetricReport:
    """Per-frame metric values with mean/std aggregation."""

    psnr: np.ndarray
    ssim: np.ndarray
    dice: np.ndarray
    iou: np.ndarray
    label: str = ""
    mask_threshold: float = DEFAULT_MASK_THRESHOLD
    frame_ids: list = field(default_factory=list)

    METRICS = ("psnr", "ssim", "dice", "iou")

    def mean(self, name: str) -> float:
        return float(np.mean(getattr(self, name)))

    def std(self, name: str) -> float:
        return float(np.std(getattr(self, name)))

    def summary(self) -> dict:
        return {
            name: {"mean": self.mean(name), "std": self.std(name)}
            for name in self.METRICS
        }

    def to_json_lines(self) -> str:
        """One JSON record per frame plus a trailing summary record."""
        lines = []
        ids = self.frame_ids or list(range(len(self.psnr)))
        for i, fid in enumerate(ids):
            rec = {"label": self.label, "frame": fid, "mask_threshold": self.mask_threshold}
            rec.update({name: float(getattr(self, name)[i]) for name in self.METRICS})
            lines.append(json.dumps(rec))
        summary = {"label": self.label, "summary": self.summary(),
                   "mask_threshold": self.mask_threshold}
        lines.append(json.dumps(summary))
        return "\n".join(lines) + "\n"


def evaluate_frames(rendered, targets, label="", mask_threshold=DEFAULT_MASK_THRESHOLD,
                    frame_ids=None) -> MetricReport:
    """Compute all four metrics for each (rendered, target) frame pair."""
    rendered = list(rendered)
    targets = list(targets)
    if len(rendered) != len(targets):
        raise ValueError("frame count mismatch")
    values = {name: [] for name in MetricReport.METRICS}
    for a, b in zip(rendered, targets):
        values["psnr"].append(psnr(a, b))
        values["ssim"].append(ssim(a, b))
        values["dice"].append(dice(a, b, mask_threshold))
        values["iou"].append(iou(a, b, mask_threshold))
    return MetricReport(
        psnr=np.array(values["psnr"]),
        ssim=np.array(values["ssim"]),
        dice=np.array(values["dice"]),
        iou=np.array(values["iou"]),
        label=label,
        mask_threshold=mask_threshold,
        frame_ids=list(frame_ids) if frame_ids is not None else [],
    )


def format_report_table(reports) -> str:
    """Readable mean +/- std table, one row per report."""
    reports = list(reports)
    header = f"{'method':<16}" + "".join(f"{m.upper():>16}" for m in MetricReport.METRICS)
    rows = [header, "-" * len(header)]
    for rep in reports:
        cells = []
        for name in MetricReport.METRICS:
            cells.append(f"{rep.mean(name):.2f} ± {rep.std(name):.2f}")
        rows.append(f"{rep.label:<16}" + "".join(f"{c:>16}" for c in cells))
    return "\n".join(rows)
