"""Leave-frame-out evaluation: strided training, held-out scoring, baselines.

Training uses every ``stride``-th frame; the model then renders at the
held-out timestamps and is scored against the dropped frames, next to a
voxel-wise linear-interpolation baseline.  Ablation variants re-run the
same split with individual regularizers disabled.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .io import DataError, FrameStack, subsample
from .metrics import DEFAULT_MASK_THRESHOLD, MetricReport, evaluate_frames
from .render import render_frame
from .train import TrainConfig, train

ABLATION_VARIANTS = ("full", "no-ibfr", "no-sigma", "neither")


def linear_baseline(stack: FrameStack, t: float) -> np.ndarray:
    """Voxel-wise convex combination of the two frames bracketing ``t``."""
    times = np.asarray(stack.timestamps, dtype=float)
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise DataError(f"time {t} outside the stack span [{times[0]}, {times[-1]}]")
    j = int(np.searchsorted(times, t, side="right")) - 1
    j = min(max(j, 0), len(times) - 2)
    t0, t1 = times[j], times[j + 1]
    if t <= t0:
        return stack.images[j].copy()
    if t >= t1:
        return stack.images[j + 1].copy()
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * stack.images[j] + w * stack.images[j + 1]


def ablation_config(config: TrainConfig, variant: str) -> TrainConfig:
    """Config for one ablation variant of the full objective."""
    if variant == "full":
        return config
    if variant == "no-ibfr":
        return replace(config, lambda_interp=0.0)
    if variant == "no-sigma":
        return replace(config, lambda_sigma=0.0)
    if variant == "neither":
        return replace(config, lambda_interp=0.0, lambda_sigma=0.0)
    raise ValueError(f"unknown ablation variant {variant!r}; "
                     f"choose from {ABLATION_VARIANTS}")


def leave_frame_out(stack: FrameStack, stride: int, config: TrainConfig,
                    variants=("full",),
                    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
                    verbose: bool = False) -> dict:
    """Train on a strided subset and score interpolation at held-out times.

    Returns a dict with one :class:`MetricReport` per trained variant plus
    the ``linear`` baseline, and the trained scenes.  The training and
    held-out sets are disjoint by construction (asserted on source labels).
    """
    train_stack, test_stack = subsample(stack, stride)
    if test_stack is None or len(test_stack.images) == 0:
        raise DataError(f"stride {stride} leaves nothing to evaluate")
    overlap = set(train_stack.source_indices) & set(test_stack.source_indices)
    assert not overlap, f"held-out frames leaked into training: {overlap}"

    height, width = stack.images[0].shape
    test_times = [float(t) for t in test_stack.timestamps]
    reports = {}
    scenes = {}
    for variant in variants:
        cfg = ablation_config(config, variant)
        scene = train(train_stack, cfg, verbose=verbose)
        rendered = [render_frame(scene, t, width, height) for t in test_times]
        reports[variant] = evaluate_frames(
            rendered, test_stack.images, label=variant,
            mask_threshold=mask_threshold, frame_ids=test_stack.source_indices,
        )
        scenes[variant] = scene

    baseline = [linear_baseline(train_stack, t) for t in test_times]
    reports["linear"] = evaluate_frames(
        baseline, test_stack.images, label="linear",
        mask_threshold=mask_threshold, frame_ids=test_stack.source_indices,
    )
    return {"reports": reports, "scenes": scenes,
            "train_indices": list(train_stack.source_indices),
            "test_indices": list(test_stack.source_indices)}
