"""Scene fitting: losses, blended-frame regularization, Adam, densification.

One training iteration renders one original frame and, in interpolation
mode, one synthetic in-between frame blended from an adjacent frame pair.
The in-between targets act as a regularizer that stops gaussians from
bending freely between slices; binary-mask (mesh) fitting skips them since
blending binary frames would manufacture invalid gray values.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .core import MODE_INTERPOLATION, MODE_MESH, MODES, PARAM_FIELDS, Scene
from .render import GradientBuffer, cull, render_with_grad


class NumericalError(RuntimeError):
    """Raised when optimization produces non-finite values."""


DEFAULT_ALPHA_RANGE = (0.2, 0.8)

# parameter array -> learning-rate group
LR_GROUPS = {
    "means": "means",
    "temporal_means": "temporal",
    "log_temporal_spreads": "temporal",
    "rotations": "rotation",
    "log_scales": "log_scales",
    "motion_coeffs": "polynomials",
    "scale_coeffs": "polynomials",
    "opacity_logits": "opacity",
    "colors": "color",
}


@dataclass
class TrainConfig:
    """Every knob of the fitting procedure.

    ``lambda_l1 .. lambda_sigma`` weight the four loss terms (pixel L1,
    structural dissimilarity, in-between-frame L1, temporal-spread penalty).
    Learning rates are per parameter group; the means rate decays
    exponentially to ``mean_lr_final_ratio`` of its initial value over the
    run.  ``motion_degree=None`` resolves to 7 in interpolation mode and 2
    in mesh mode.
    """

    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_interp: float = 0.4
    lambda_sigma: float = 0.1
    iterations: int = 3000
    lr_means: float = 2e-3
    lr_rotation: float = 5e-3
    lr_log_scales: float = 5e-3
    lr_polynomials: float = 2e-3
    lr_temporal: float = 2e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-2
    mean_lr_final_ratio: float = 0.01
    ibfr_alpha_range: tuple = DEFAULT_ALPHA_RANGE
    densify_interval: int = 200
    densify_grad_threshold: float = 2e-4
    densify_start: int = 500
    densify_stop: int | None = None
    prune_opacity_threshold: float = 0.005
    initial_gaussian_count: int = 2000
    motion_degree: int | None = None
    scale_degree: int = 2
    mode: str = MODE_INTERPOLATION
    rng_seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lambda_l1", "lambda_ssim", "lambda_interp", "lambda_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.ibfr_alpha_range
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("ibfr_alpha_range must satisfy 0 < lo < hi < 1")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        for name in ("densify_grad_threshold", "prune_opacity_threshold",
                     "densify_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.initial_gaussian_count <= 0:
            raise ValueError("initial_gaussian_count must be positive")

    @property
    def resolved_motion_degree(self) -> int:
        if self.motion_degree is not None:
            return self.motion_degree
        return 7 if self.mode == MODE_INTERPOLATION else 2

    @property
    def resolved_densify_stop(self) -> int:
        if self.densify_stop is not None:
            return self.densify_stop
        return int(0.7 * self.iterations)

    def learning_rates(self, iteration: int) -> dict:
        decay = self.mean_lr_final_ratio ** (iteration / self.iterations)
        return {
            "means": self.lr_means * decay,
            "rotation": self.lr_rotation,
            "log_scales": self.lr_log_scales,
            "polynomials": self.lr_polynomials,
            "temporal": self.lr_temporal,
            "opacity": self.lr_opacity,
            "color": self.lr_color,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ibfr_alpha_range"] = list(self.ibfr_alpha_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "ibfr_alpha_range" in d:
            d["ibfr_alpha_range"] = tuple(d["ibfr_alpha_range"])
        return cls(**d)


@dataclass
class FramePair:
    """Two consecutive frames of the training subset."""

    earlier: np.ndarray
    earlier_time: float
    later: np.ndarray
    later_time: float

    def __post_init__(self):
        if self.earlier_time >= self.later_time:
            raise ValueError("pair timestamps must be strictly increasing")
        if self.earlier.shape != self.later.shape:
            raise ValueError("pair frames must have equal dimensions")


def ibfr_sample(pair: FramePair, alpha: float,
                alpha_range: tuple = DEFAULT_ALPHA_RANGE):
    """Blend a synthetic in-between frame from a consecutive frame pair.

    ``alpha`` weights the *earlier* frame: the target is
    ``alpha * earlier + (1 - alpha) * later`` and its timestamp the same
    convex combination of the pair's timestamps, which is exact for
    linear motion.
    """
    lo, hi = alpha_range
    if not (lo <= alpha <= hi):
        raise ValueError(f"alpha {alpha} outside [{lo}, {hi}]")
    blended = alpha * pair.earlier + (1.0 - alpha) * pair.later
    t_alpha = alpha * pair.earlier_time + (1.0 - alpha) * pair.later_time
    return t_alpha, blended


def loss_sigma(scene: Scene) -> float:
    """Mean penalty on temporal spreads outside the band [2/N, 1]."""
    n = len(scene)
    if n == 0:
        return 0.0
    sig = scene.temporal_spreads
    lo = 2.0 / scene.frame_count
    return float(np.mean(np.maximum(lo - sig, 0.0) + np.maximum(sig - 1.0, 0.0)))


def loss_sigma_grad(scene: Scene) -> np.ndarray:
    """d loss_sigma / d log_temporal_spreads (subgradient 0 on the band edges)."""
    n = len(scene)
    if n == 0:
        return np.zeros(0)
    sig = scene.temporal_spreads
    lo = 2.0 / scene.frame_count
    outer = np.where(sig < lo, -1.0, 0.0) + np.where(sig > 1.0, 1.0, 0.0)
    return outer * sig / n


def _mean_l1(rendered, targets):
    vals = [float(np.mean(np.abs(r - t))) for r, t in zip(rendered, targets)]
    return float(np.mean(vals)) if vals else 0.0


def loss_interp(rendered_originals, originals, rendered_ibfr, ibfr_targets,
                scene: Scene, config: TrainConfig):
    """Full interpolation objective over lists of frames.

    Returns ``(total, parts)`` where parts holds the unweighted values of
    l1, dssim (1 - SSIM), interp and sigma terms.
    """
    from .ssim import ssim

    rendered_originals = list(rendered_originals)
    originals = list(originals)
    if len(rendered_originals) != len(originals):
        raise ValueError("original frame count mismatch")
    for r, t in zip(rendered_originals, originals):
        if np.shape(r) != np.shape(t):
            raise ValueError("original frame dimensions mismatch")
    rendered_ibfr = list(rendered_ibfr)
    ibfr_targets = list(ibfr_targets)
    if len(rendered_ibfr) != len(ibfr_targets):
        raise ValueError("ibfr frame count mismatch")

    l1 = _mean_l1(rendered_originals, originals)
    if config.lambda_ssim > 0 and rendered_originals:
        dssim = float(np.mean(
            [1.0 - ssim(r, t) for r, t in zip(rendered_originals, originals)]
        ))
    else:
        dssim = 0.0
    interp = _mean_l1(rendered_ibfr, ibfr_targets)
    sigma = loss_sigma(scene)
    parts = {"l1": l1, "dssim": dssim, "interp": interp, "sigma": sigma}
    total = (config.lambda_l1 * l1 + config.lambda_ssim * dssim
             + config.lambda_interp * interp + config.lambda_sigma * sigma)
    return total, parts


def loss_mesh(rendered, targets, scene: Scene, config: TrainConfig):
    """Mask-fitting objective: pixel L1 plus the temporal-spread penalty."""
    cfg = replace(config, lambda_ssim=0.0, lambda_interp=0.0)
    return loss_interp(rendered, targets, [], [], scene, cfg)


@dataclass
class AdamState:
    """First/second moment estimates per parameter array."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_for(cls, scene: Scene) -> "AdamState":
        return cls(
            m={f: np.zeros_like(getattr(scene, f)) for f in PARAM_FIELDS},
            v={f: np.zeros_like(getattr(scene, f)) for f in PARAM_FIELDS},
        )

    def remap(self, scene: Scene, source: np.ndarray) -> "AdamState":
        """Re-align moments after densify/prune.

        ``source[i]`` is the old index of new gaussian ``i`` or -1 for a
        freshly inserted one (moments restart at zero).
        """
        fresh = source < 0
        safe = np.where(fresh, 0, source)
        new_m, new_v = {}, {}
        for f in PARAM_FIELDS:
            m = self.m[f][safe].copy()
            v = self.v[f][safe].copy()
            m[fresh] = 0.0
            v[fresh] = 0.0
            new_m[f], new_v[f] = m, v
        return AdamState(m=new_m, v=new_v, step=self.step)


def adam_step(scene: Scene, grad: GradientBuffer, state: AdamState,
              lrs: dict, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-15) -> None:
    """One bias-corrected Adam update, in place, with per-group rates."""
    grad.check_finite()
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for f in PARAM_FIELDS:
        g = getattr(grad, f)
        m = state.m[f]
        v = state.v[f]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        getattr(scene, f).__isub__(lrs[LR_GROUPS[f]] * update)


# densification constants: relative major-axis offsets and the split shrink
CLONE_JITTER = 0.1
SPLIT_OFFSET = 0.5
SPLIT_SHRINK = 1.6
LARGE_SCALE_FRACTION = 0.01  # of image width, in normalized units


def _major_axis(scene: Scene, index: np.ndarray):
    ls = scene.log_scales[index]
    which = np.argmax(ls, axis=1)
    sigma = np.exp(ls[np.arange(len(index)), which])
    c = np.cos(scene.rotations[index])
    s = np.sin(scene.rotations[index])
    # columns of R are the eigen directions: axis 0 -> (c, s), axis 1 -> (-s, c)
    vx = np.where(which == 0, c, -s)
    vy = np.where(which == 0, s, c)
    return sigma, np.stack([vx, vy], axis=1)


def _halved_opacity_logit(logits):
    # under additive compositing a duplicated gaussian doubles its pixel
    # mass; both copies continue at half opacity so the render is unchanged
    rho = 0.5 / (1.0 + np.exp(-logits))
    return np.log(rho / (1.0 - rho))


def densify_and_prune(scene: Scene, avg_grad_norms: np.ndarray,
                      config: TrainConfig, rng: np.random.Generator):
    """Adaptive density control.

    Gaussians whose averaged positional-gradient norm exceeds the threshold
    are duplicated: sub-pixel ones are cloned with a small jitter along
    their major axis, larger ones are split into two offset children with
    shrunken scales.  Each duplicate continues at half the parent's opacity
    so the rendered image is (up to the jitter) unchanged on the iteration
    densification fires.  Gaussians with opacity under the prune threshold
    are removed.  Returns ``(new_scene, source_indices, stats)`` where
    ``source_indices[i]`` is the originating old index or -1 for new ones.
    """
    n = len(scene)
    if n == 0:
        return scene.copy(), np.zeros(0, dtype=np.intp), {"cloned": 0, "split": 0, "pruned": 0}
    if len(avg_grad_norms) != n:
        raise ValueError("gradient accumulator is not aligned with the scene")

    keep = scene.opacities >= config.prune_opacity_threshold
    over = (avg_grad_norms > config.densify_grad_threshold) & keep
    large = np.max(np.exp(scene.log_scales), axis=1) > LARGE_SCALE_FRACTION
    clone_idx = np.nonzero(over & ~large)[0]
    split_idx = np.nonzero(over & large)[0]

    survivors = np.nonzero(keep & ~np.isin(np.arange(n), split_idx))[0]
    base = scene.select(survivors)
    halved = _halved_opacity_logit(scene.opacity_logits)
    cloned_mask = np.isin(survivors, clone_idx)
    base.opacity_logits[cloned_mask] = halved[survivors[cloned_mask]]
    pieces = [base]
    sources = [survivors]

    if clone_idx.size:
        clones = scene.select(clone_idx)
        clones.opacity_logits = halved[clone_idx].copy()
        sigma, axis = _major_axis(scene, clone_idx)
        sign = rng.choice([-1.0, 1.0], size=clone_idx.size)
        clones.means += (CLONE_JITTER * sigma * sign)[:, None] * axis
        pieces.append(clones)
        sources.append(np.full(clone_idx.size, -1, dtype=np.intp))

    if split_idx.size:
        sigma, axis = _major_axis(scene, split_idx)
        for direction in (1.0, -1.0):
            child = scene.select(split_idx)
            child.opacity_logits = halved[split_idx].copy()
            child.means += (direction * SPLIT_OFFSET * sigma)[:, None] * axis
            child.log_scales -= np.log(SPLIT_SHRINK)
            pieces.append(child)
            sources.append(np.full(split_idx.size, -1, dtype=np.intp))

    merged = Scene(
        **{f: np.concatenate([getattr(p, f) for p in pieces], axis=0)
           for f in PARAM_FIELDS},
        frame_count=scene.frame_count,
        image_width=scene.image_width,
        image_height=scene.image_height,
        mode=scene.mode,
    )
    stats = {
        "cloned": int(clone_idx.size),
        "split": int(split_idx.size),
        "pruned": int(n - keep.sum()),
    }
    return merged, np.concatenate(sources), stats


def _bilinear_sample(img: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Sample at normalized coords with pixel centers at (i + 0.5) / size."""
    h, w = img.shape
    fx = np.clip(xy[:, 0] * w - 0.5, 0.0, w - 1.0)
    fy = np.clip(xy[:, 1] * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    return ((1 - ax) * (1 - ay) * img[y0, x0] + ax * (1 - ay) * img[y0, x1]
            + (1 - ax) * ay * img[y1, x0] + ax * ay * img[y1, x1])


def initialize_scene(frames, config: TrainConfig, rng: np.random.Generator) -> Scene:
    """Seed gaussians uniformly over space and time.

    Scales start near two pixel widths, temporal spreads at 1.5x the lower
    band edge, opacity at 0.1; colors sample the nearest frame bilinearly
    at each mean so bright regions start bright.
    """
    n = config.initial_gaussian_count
    n_frames = len(frames.images)
    height, width = frames.images[0].shape
    means = rng.uniform(0.0, 1.0, size=(n, 2))
    t_means = rng.uniform(0.0, 1.0, size=n)
    sigma_t = 1.5 * 2.0 / n_frames

    nearest = np.abs(
        np.asarray(frames.timestamps)[None, :] - t_means[:, None]
    ).argmin(axis=1)
    colors = np.empty(n)
    for k in np.unique(nearest):
        sel = nearest == k
        colors[sel] = _bilinear_sample(frames.images[k], means[sel])

    return Scene(
        means=means,
        temporal_means=t_means,
        log_temporal_spreads=np.full(n, np.log(sigma_t)),
        rotations=np.zeros(n),
        log_scales=np.full((n, 2), np.log(2.0 / width)),
        motion_coeffs=np.zeros((n, 2, config.resolved_motion_degree)),
        scale_coeffs=np.zeros((n, config.scale_degree)),
        opacity_logits=np.full(n, np.log(0.1 / 0.9)),
        colors=colors,
        frame_count=n_frames,
        image_width=width,
        image_height=height,
        mode=config.mode,
    )


def iteration_loss_and_grad(scene: Scene, t_frame: float, frame: np.ndarray,
                            config: TrainConfig, t_ibfr: float | None = None,
                            ibfr_target: np.ndarray | None = None):
    """Loss and gradients for one iteration's frame (plus optional blend).

    This is the exact quantity the trainer steps on; tests difference it
    numerically against every parameter.
    """
    rendered, parts, grad = render_with_grad(
        scene, t_frame, frame, config.lambda_l1, config.lambda_ssim
    )
    total = parts["weighted"]
    out_parts = {"l1": parts["l1"], "dssim": parts["dssim"], "interp": 0.0}
    if t_ibfr is not None:
        _, iparts, igrad = render_with_grad(
            scene, t_ibfr, ibfr_target, config.lambda_interp, 0.0
        )
        total += iparts["weighted"]
        out_parts["interp"] = iparts["l1"]
        grad.add(igrad)
    sigma = loss_sigma(scene)
    out_parts["sigma"] = sigma
    total += config.lambda_sigma * sigma
    grad.log_temporal_spreads += config.lambda_sigma * loss_sigma_grad(scene)
    return total, out_parts, grad, rendered


def train(frames, config: TrainConfig, log_file=None, verbose: bool = False,
          history: list | None = None) -> Scene:
    """Fit a scene to a frame stack.

    Fully reproducible from ``config.rng_seed``: frame order is round-robin
    and every random draw (initialization, blend weights, densify offsets)
    comes from one seeded generator.

    Parameters
    ----------
    frames : FrameStack
    config : TrainConfig
    log_file : file-like, optional
        Receives one JSON record per log interval.
    verbose : bool
        Mirror progress lines to stdout.
    history : list, optional
        Collects the same records as ``log_file``.
    """
    n_frames = len(frames.images)
    if n_frames < 2:
        raise ValueError("training needs at least 2 frames")
    height, width = frames.images[0].shape
    times = np.asarray(frames.timestamps, dtype=float)

    rng = np.random.default_rng(config.rng_seed)
    scene = initialize_scene(frames, config, rng)
    state = AdamState.zeros_for(scene)
    accum = np.zeros(len(scene))
    denom = np.zeros(len(scene))

    use_ibfr = config.mode == MODE_INTERPOLATION and config.lambda_interp > 0
    ssim_weight = config.lambda_ssim if config.mode == MODE_INTERPOLATION else 0.0
    cfg_eff = replace(config, lambda_ssim=ssim_weight)
    densify_stop = config.resolved_densify_stop

    for it in range(config.iterations):
        k = it % n_frames
        t_ibfr = ibfr_target = None
        if use_ibfr:
            if k == 0:
                j = 0
            elif k == n_frames - 1:
                j = n_frames - 2
            else:
                j = k - 1 + int(rng.integers(0, 2))
            alpha = float(rng.uniform(*config.ibfr_alpha_range))
            pair = FramePair(frames.images[j], float(times[j]),
                             frames.images[j + 1], float(times[j + 1]))
            t_ibfr, ibfr_target = ibfr_sample(pair, alpha, config.ibfr_alpha_range)

        total, parts, grad, _ = iteration_loss_and_grad(
            scene, float(times[k]), frames.images[k], cfg_eff, t_ibfr, ibfr_target
        )
        if not np.isfinite(total):
            raise NumericalError(
                f"non-finite loss at iteration {it}: parts={parts}, "
                f"gaussians={len(scene)}"
            )

        retained = cull(scene, float(times[k]), width, height)
        accum[retained] += np.linalg.norm(grad.means[retained], axis=1)
        denom[retained] += 1.0

        adam_step(scene, grad, state, config.learning_rates(it))
        # colors live in [0, 1]; project after the unconstrained step
        np.clip(scene.colors, 0.0, 1.0, out=scene.colors)

        if (config.densify_start <= it <= densify_stop
                and it % config.densify_interval == 0 and it > 0):
            avg = accum / np.maximum(denom, 1.0)
            scene, source, stats = densify_and_prune(scene, avg, config, rng)
            state = state.remap(scene, source)
            accum = np.zeros(len(scene))
            denom = np.zeros(len(scene))

        if (it % config.log_interval == 0 or it == config.iterations - 1):
            record = {"iteration": it, "total": total, "gaussians": len(scene)}
            record.update(parts)
            if history is not None:
                history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if verbose:
                print(
                    f"iter {it:6d}  loss {total:.5f}  l1 {parts['l1']:.5f}  "
                    f"dssim {parts['dssim']:.5f}  interp {parts['interp']:.5f}  "
                    f"sigma {parts['sigma']:.5f}  n {len(scene)}",
                    file=sys.stdout, flush=True,
                )

    scene.check_finite()
    return scene
