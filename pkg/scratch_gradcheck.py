"""Dev scratch: FD gradcheck of render_with_grad before building the trainer."""
import numpy as np

from slicesplat.core import Scene, condition_at_time, eval_density
from slicesplat.render import render_frame, render_with_grad
from slicesplat.core import PARAM_FIELDS


def random_scene(rng, n=6, motion_degree=7, scale_degree=2, frame_count=9):
    n_g = n
    return Scene(
        means=rng.uniform(0.15, 0.85, size=(n_g, 2)),
        temporal_means=rng.uniform(0.3, 0.7, size=n_g),
        log_temporal_spreads=np.log(rng.uniform(0.25, 0.6, size=n_g)),
        rotations=rng.uniform(-np.pi, np.pi, size=n_g),
        log_scales=np.log(rng.uniform(0.06, 0.2, size=(n_g, 2))),
        motion_coeffs=rng.normal(0, 0.1, size=(n_g, 2, motion_degree)),
        scale_coeffs=rng.normal(0, 0.2, size=(n_g, scale_degree)),
        opacity_logits=rng.uniform(-3.0, -1.0, size=n_g),
        colors=rng.uniform(0.2, 0.9, size=n_g),
        frame_count=frame_count,
        image_width=16,
        image_height=16,
    )


def brute_force_render(scene, t, width, height):
    img = np.zeros((height, width))
    for i in range(len(scene)):
        g = scene[i]
        cg = condition_at_time(g, t)
        for r in range(height):
            for c in range(width):
                p = ((c + 0.5) / width, (r + 0.5) / height)
                img[r, c] += g.color * g.opacity * cg.temporal_weight * eval_density(cg, p)
    return np.clip(img, 0, 1)


def loss_value(scene, t, target, l1w, ssimw):
    from slicesplat.ssim import ssim
    img = render_frame(scene, t, target.shape[1], target.shape[0])
    val = l1w * np.mean(np.abs(img - target))
    if ssimw:
        val += ssimw * (1.0 - ssim(img, target))
    return val


def main():
    rng = np.random.default_rng(42)
    scene = random_scene(rng)
    t = 0.45
    W = H = 16

    img = render_frame(scene, t, W, H)
    ref = brute_force_render(scene, t, W, H)
    print("max |pair - brute| =", np.abs(img - ref).max())
    print("raw range:", img.min(), img.max())

    # target with margin away from rendered values (L1 kink safety):
    # push toward the interior so clipping never erases the margin
    off = rng.uniform(0.03, 0.2, size=img.shape)
    target = np.where(img < 0.5, img + off, img - off)
    assert np.abs(img - target).min() > 1e-3 and target.min() >= 0 and target.max() <= 1

    l1w, ssimw = 0.8, 0.2
    _, parts, grad = render_with_grad(scene, t, target, l1w, ssimw)

    h = 1e-4
    worst = 0.0
    worst_info = None
    for fname in PARAM_FIELDS:
        arr = getattr(scene, fname)
        it = np.nditer(arr, flags=["multi_index"])
        g_arr = getattr(grad, fname)
        for _ in it:
            mi = it.multi_index
            orig = arr[mi]
            arr[mi] = orig + h
            lp = loss_value(scene, t, target, l1w, ssimw)
            arr[mi] = orig - h
            lm = loss_value(scene, t, target, l1w, ssimw)
            arr[mi] = orig
            fd = (lp - lm) / (2 * h)
            an = g_arr[mi]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            if err > worst:
                worst = err
                worst_info = (fname, mi, an, fd)
    print("worst rel err:", worst, worst_info)


if __name__ == "__main__":
    main()
