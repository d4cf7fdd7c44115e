"""Differentiable rasterization of a scene onto a pixel grid.

A pixel's raw value is the sum over surviving gaussians of
``color * opacity * temporal_weight * kernel(pixel)``, clamped to [0, 1].
Compositing is order-independent additive accumulation (slices carry no
depth ordering), which keeps both the image and the analytic gradients
exactly reproducible: every reduction below runs in a fixed index order
(``bincount`` over pixels, ``reduceat`` over per-gaussian segments) and no
threaded BLAS path is involved.

Pixel (row, col) has continuous coordinate ((col+0.5)/W, (row+0.5)/H).
The clamp backpropagates identity strictly inside (0, 1) and zero outside.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .core import PARAM_FIELDS, Scene
from .ssim import ssim_and_grad

# Temporal and spatial survival radius, in standard deviations.
CULL_SIGMA = 3.0
# Per-pixel kernel evaluations are skipped where a gaussian's contribution
# bound drops below this; keeps windows finite without visible error.
WINDOW_EPS = 1e-7
_MAX_R2 = 2.0 * np.log(1.0 / WINDOW_EPS)

# number of float scratch rows used by one render-with-gradient call
_N_SCRATCH = 18


class _Scratch(threading.local):
    """Reusable per-thread buffers; large temporaries churn the allocator."""

    def __init__(self):
        self.block = np.empty((_N_SCRATCH, 0))

    def rows(self, n: int) -> np.ndarray:
        if self.block.shape[1] < n:
            self.block = np.empty((_N_SCRATCH, int(n * 1.5) + 1024))
        return self.block[:, :n]


_SCRATCH = _Scratch()


@dataclass
class GradientBuffer:
    """Partial derivatives of a scalar loss w.r.t. every scene parameter.

    Arrays mirror the scene's parameter arrays in shape and order.
    """

    means: np.ndarray
    temporal_means: np.ndarray
    log_temporal_spreads: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    motion_coeffs: np.ndarray
    scale_coeffs: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    @classmethod
    def zeros_for(cls, scene: Scene) -> "GradientBuffer":
        return cls(**{f: np.zeros_like(getattr(scene, f)) for f in PARAM_FIELDS})

    def arrays(self):
        return {f: getattr(self, f) for f in PARAM_FIELDS}

    def add(self, other: "GradientBuffer") -> "GradientBuffer":
        for f in PARAM_FIELDS:
            getattr(self, f).__iadd__(getattr(other, f))
        return self

    def check_finite(self):
        for f in PARAM_FIELDS:
            arr = getattr(self, f)
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise ValueError(
                    f"non-finite gradient for parameter {f!r} of gaussian {int(bad[0])}"
                )


class _Conditioned:
    """Vectorized per-gaussian quantities at a fixed query time."""

    __slots__ = (
        "idx", "u", "mean", "amp", "tau", "opacity", "inv_var1", "inv_var2",
        "cos", "sin", "cov_xx", "cov_yy", "sigma_t", "t",
    )

    def __init__(self, scene: Scene, t: float, idx: np.ndarray):
        self.idx = idx
        self.t = float(t)
        mt = scene.temporal_means[idx]
        u = mt - t
        self.u = u

        deg = scene.motion_degree
        pow_m = u[:, None] ** np.arange(1, deg + 1)
        shift = np.einsum("nkd,nd->nk", scene.motion_coeffs[idx], pow_m)
        self.mean = scene.means[idx] + shift

        deg_a = scene.scale_degree
        pow_a = u[:, None] ** np.arange(1, deg_a + 1)
        rescale = np.exp(np.sum(scene.scale_coeffs[idx] * pow_a, axis=1))

        sigma_t = np.exp(scene.log_temporal_spreads[idx])
        self.sigma_t = sigma_t
        self.tau = np.exp(-0.5 * ((t - mt) / sigma_t) ** 2)
        self.opacity = 1.0 / (1.0 + np.exp(-scene.opacity_logits[idx]))
        self.amp = scene.colors[idx] * self.opacity * self.tau

        c = np.cos(scene.rotations[idx])
        s = np.sin(scene.rotations[idx])
        self.cos, self.sin = c, s
        var1 = np.exp(2.0 * scene.log_scales[idx, 0]) * rescale
        var2 = np.exp(2.0 * scene.log_scales[idx, 1]) * rescale
        self.inv_var1 = 1.0 / var1
        self.inv_var2 = 1.0 / var2
        # axis-aligned variances of the conditioned covariance, for bboxes
        self.cov_xx = c * c * var1 + s * s * var2
        self.cov_yy = s * s * var1 + c * c * var2


def cull(scene: Scene, t: float, width: int, height: int) -> np.ndarray:
    """Indices of gaussians that can contribute to a frame at time ``t``.

    A gaussian survives when ``|t - temporal_mean| <= 3 sigma_t`` and the
    3-sigma ellipse of its conditioned spatial covariance intersects the
    unit square.  Everything dropped contributes at most
    ``exp(-4.5) * opacity`` to any pixel.
    """
    n = len(scene)
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    sigma_t = np.exp(scene.log_temporal_spreads)
    temporal_ok = np.abs(t - scene.temporal_means) <= CULL_SIGMA * sigma_t
    idx = np.nonzero(temporal_ok)[0]
    if idx.size == 0:
        return idx

    cond = _Conditioned(scene, t, idx)
    mx, my = cond.mean[:, 0], cond.mean[:, 1]
    inside = (mx >= 0.0) & (mx <= 1.0) & (my >= 0.0) & (my <= 1.0)

    # exact ellipse/rectangle test for the rest: minimum Mahalanobis
    # distance from the mean to the square's boundary segments
    c, s = cond.cos, cond.sin
    iv1, iv2 = cond.inv_var1, cond.inv_var2
    lam_xx = c * c * iv1 + s * s * iv2
    lam_yy = s * s * iv1 + c * c * iv2
    lam_xy = c * s * (iv1 - iv2)

    def quad(ex, ey):
        return lam_xx * ex * ex + 2.0 * lam_xy * ex * ey + lam_yy * ey * ey

    corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    best = np.full(idx.shape, np.inf)
    for k in range(4):
        ax, ay = corners[k]
        bx, by = corners[(k + 1) % 4]
        dx, dy = bx - ax, by - ay
        ex, ey = ax - mx, ay - my
        dd = quad(dx, dy)
        de = lam_xx * dx * ex + lam_xy * (dx * ey + dy * ex) + lam_yy * dy * ey
        sstar = np.clip(-de / dd, 0.0, 1.0)
        best = np.minimum(best, quad(ex + sstar * dx, ey + sstar * dy))
    spatial_ok = inside | (best <= CULL_SIGMA**2)
    return idx[spatial_ok]


def _pair_layout(cond: _Conditioned, width: int, height: int):
    """Flat (gaussian, pixel) pair indexing over per-gaussian windows.

    Window radius adapts to each gaussian's possible contribution
    ``opacity * tau`` so that skipped pixels stay below WINDOW_EPS; it never
    shrinks under the 3-sigma ellipse.
    """
    bound = np.maximum(cond.opacity * cond.tau, WINDOW_EPS)
    r2 = np.clip(2.0 * np.log(bound / WINDOW_EPS), CULL_SIGMA**2, _MAX_R2)
    r = np.sqrt(r2)
    half_x = r * np.sqrt(cond.cov_xx)
    half_y = r * np.sqrt(cond.cov_yy)
    mx, my = cond.mean[:, 0], cond.mean[:, 1]

    c0 = np.maximum(np.ceil((mx - half_x) * width - 0.5), 0.0).astype(np.int64)
    c1 = np.minimum(np.floor((mx + half_x) * width - 0.5), width - 1).astype(np.int64)
    r0 = np.maximum(np.ceil((my - half_y) * height - 0.5), 0.0).astype(np.int64)
    r1 = np.minimum(np.floor((my + half_y) * height - 0.5), height - 1).astype(np.int64)

    ncols = c1 - c0 + 1
    nrows = r1 - r0 + 1
    counts = np.maximum(ncols, 0) * np.maximum(nrows, 0)
    active = np.nonzero(counts > 0)[0]
    if active.size == 0:
        return active, None, None, None
    counts = counts[active]
    offsets = np.zeros(active.size, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    total = int(offsets[-1] + counts[-1])

    seg = np.repeat(np.arange(active.size), counts)
    local = np.arange(total)
    local -= offsets[seg]
    rows, cols = np.divmod(local, ncols[active][seg])
    rows += r0[active][seg]
    cols += c0[active][seg]
    rows *= width
    rows += cols
    return active, seg, offsets, rows  # rows now holds flat pixel indices


def _forward_pairs(cond, active, seg, flat_pix, width, height, ws):
    """Fill scratch rows with per-pair kernel quantities.

    Scratch layout: 0..6 gathered per-gaussian constants (mean x/y, cos,
    sin, inv_var1/2, amplitude), 7 z1, 8 z2, 9 q, 10 g, 11.. temporaries.
    """
    consts = np.stack([
        cond.mean[:, 0][active], cond.mean[:, 1][active], cond.cos[active],
        cond.sin[active], cond.inv_var1[active], cond.inv_var2[active],
        cond.amp[active],
    ])
    np.take(consts, seg, axis=1, out=ws[0:7])
    z1, z2, q, g, dx, dy, t0 = (ws[i] for i in range(7, 14))
    np.mod(flat_pix, width, out=dx)
    dx += 0.5
    dx *= 1.0 / width
    dx -= ws[0]
    np.floor_divide(flat_pix, width, out=dy)
    dy += 0.5
    dy *= 1.0 / height
    dy -= ws[1]
    np.multiply(ws[2], dx, out=z1)
    np.multiply(ws[3], dy, out=t0)
    z1 += t0
    np.multiply(ws[2], dy, out=z2)
    np.multiply(ws[3], dx, out=t0)
    z2 -= t0
    np.multiply(z1, z1, out=q)
    q *= ws[4]
    np.multiply(z2, z2, out=t0)
    t0 *= ws[5]
    q += t0
    np.multiply(q, -0.5, out=g)
    np.exp(g, out=g)


def _raw_image(scene: Scene, t: float, width: int, height: int):
    if width <= 0 or height <= 0:
        raise ValueError("empty raster")
    idx = cull(scene, t, width, height)
    if idx.size == 0:
        return np.zeros((height, width)), None
    cond = _Conditioned(scene, t, idx)
    active, seg, offsets, flat_pix = _pair_layout(cond, width, height)
    if active.size == 0:
        return np.zeros((height, width)), None
    ws = _SCRATCH.rows(flat_pix.size)
    _forward_pairs(cond, active, seg, flat_pix, width, height, ws)
    phi = np.multiply(ws[6], ws[10], out=ws[11])  # amp * g
    raw = np.bincount(flat_pix, weights=phi, minlength=height * width)
    state = (idx, cond, active, offsets, flat_pix, ws)
    return raw.reshape(height, width), state


def render_frame(scene: Scene, t: float, width: int, height: int) -> np.ndarray:
    """Render the scene at time ``t`` onto a ``height x width`` grid.

    Returns a float image in [0, 1].  Deterministic for a fixed scene.
    """
    raw, _ = _raw_image(scene, t, width, height)
    return np.clip(raw, 0.0, 1.0)


def render_with_grad(scene: Scene, t: float, target: np.ndarray,
                     l1_weight: float = 1.0, ssim_weight: float = 0.0):
    """Render at ``t`` and backpropagate an image loss to every parameter.

    The loss is ``l1_weight * mean|rendered - target| + ssim_weight *
    (1 - SSIM(rendered, target))``.  Gradients are exact analytic partials
    (the L1 term uses the sign subgradient, the clamp passes gradients only
    strictly inside (0, 1)).

    Returns
    -------
    rendered : ndarray
    parts : dict
        ``l1``, ``dssim`` (1 - SSIM, 0.0 when unweighted) and ``weighted``.
    grad : GradientBuffer
    """
    target = np.asarray(target, dtype=float)
    if target.ndim != 2:
        raise ValueError("target must be a 2D image")
    height, width = target.shape
    raw, state = _raw_image(scene, t, width, height)
    rendered = np.clip(raw, 0.0, 1.0)

    diff = rendered - target
    n_pix = rendered.size
    l1 = float(np.mean(np.abs(diff)))
    pixel_grad = l1_weight * np.sign(diff) / n_pix
    dssim = 0.0
    if ssim_weight != 0.0:
        ssim_value, ssim_grad = ssim_and_grad(rendered, target)
        dssim = 1.0 - ssim_value
        pixel_grad = pixel_grad - ssim_weight * ssim_grad
    parts = {"l1": l1, "dssim": dssim,
             "weighted": l1_weight * l1 + ssim_weight * dssim}

    grad = GradientBuffer.zeros_for(scene)
    if state is None:
        return rendered, parts, grad

    idx, cond, active, offsets, flat_pix, ws = state
    z1, z2, q, g = ws[7], ws[8], ws[9], ws[10]
    # clamp subgradient: identity strictly inside (0, 1), zero outside
    inside = (raw > 0.0) & (raw < 1.0)
    upstream = (pixel_grad * inside).ravel()

    gg, base, t0, t1, w1, w2 = (ws[i] for i in range(11, 17))
    np.take(upstream, flat_pix, out=gg)
    gg *= g
    np.multiply(ws[6], gg, out=base)

    red = lambda values: np.add.reduceat(values, offsets)
    sum_gg = red(gg)

    np.multiply(ws[4], z1, out=w1)
    np.multiply(ws[5], z2, out=w2)
    # world-frame components of (inverse covariance) @ (pixel - mean)
    np.multiply(ws[2], w1, out=t0)
    np.multiply(ws[3], w2, out=t1)
    t0 -= t1
    t0 *= base
    sum_x = red(t0)
    np.multiply(ws[3], w1, out=t0)
    np.multiply(ws[2], w2, out=t1)
    t0 += t1
    t0 *= base
    sum_y = red(t0)

    np.multiply(z1, z1, out=t0)
    t0 *= base
    sum_z11 = red(t0)
    np.multiply(z2, z2, out=t0)
    t0 *= base
    sum_z22 = red(t0)
    np.multiply(z1, z2, out=t0)
    t0 *= base
    sum_z12 = red(t0)
    np.multiply(q, base, out=t0)
    sum_q = red(t0)

    ia = idx[active]  # scene indices of gaussians with non-empty windows
    u = cond.u[active]
    tau_a = cond.tau[active]
    op_a = cond.opacity[active]
    sig_a = cond.sigma_t[active]
    dt_a = cond.t - scene.temporal_means[ia]
    total = cond.amp[active] * sum_gg  # sum of upstream * phi per gaussian

    grad.colors[ia] = op_a * tau_a * sum_gg
    grad.opacity_logits[ia] = total * (1.0 - op_a)
    grad.means[ia, 0] = sum_x
    grad.means[ia, 1] = sum_y
    grad.log_scales[ia, 0] = cond.inv_var1[active] * sum_z11
    grad.log_scales[ia, 1] = cond.inv_var2[active] * sum_z22
    grad.rotations[ia] = -(cond.inv_var1[active] - cond.inv_var2[active]) * sum_z12

    deg = scene.motion_degree
    pow_m = u[:, None] ** np.arange(1, deg + 1)
    grad.motion_coeffs[ia, 0, :] = sum_x[:, None] * pow_m
    grad.motion_coeffs[ia, 1, :] = sum_y[:, None] * pow_m

    deg_a = scene.scale_degree
    pow_a = u[:, None] ** np.arange(1, deg_a + 1)
    grad.scale_coeffs[ia, :] = 0.5 * sum_q[:, None] * pow_a

    dpow_m = np.arange(1, deg + 1) * u[:, None] ** np.arange(0, deg)
    fprime = np.einsum("nkd,nd->nk", scene.motion_coeffs[ia], dpow_m)
    dpow_a = np.arange(1, deg_a + 1) * u[:, None] ** np.arange(0, deg_a)
    aprime = np.sum(scene.scale_coeffs[ia] * dpow_a, axis=1)
    grad.temporal_means[ia] = (
        sum_x * fprime[:, 0]
        + sum_y * fprime[:, 1]
        + 0.5 * sum_q * aprime
        + total * dt_a / sig_a**2
    )
    grad.log_temporal_spreads[ia] = total * (dt_a / sig_a) ** 2
    return rendered, parts, grad
