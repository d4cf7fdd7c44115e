import numpy as np
import pytest

from slicesplat.core import PARAM_FIELDS, Scene, condition_at_time, eval_density
from slicesplat.render import cull, render_frame, render_with_grad
from slicesplat.ssim import ssim

from conftest import make_random_scene, safe_target


def brute_force_render(scene, t, width, height):
    """Oracle: per-pixel sum over all gaussians via the core-level ops."""
    img = np.zeros((height, width))
    for i in range(len(scene)):
        g = scene[i]
        cg = condition_at_time(g, t)
        for r in range(height):
            for c in range(width):
                p = ((c + 0.5) / width, (r + 0.5) / height)
                img[r, c] += (
                    g.color * g.opacity * cg.temporal_weight * eval_density(cg, p)
                )
    return np.clip(img, 0.0, 1.0)


def single_gaussian_scene(**overrides):
    values = dict(
        means=[[0.5, 0.5]],
        temporal_means=[0.5],
        log_temporal_spreads=[np.log(0.3)],
        rotations=[0.0],
        log_scales=np.log([[0.12, 0.12]]),
        motion_coeffs=np.zeros((1, 2, 3)),
        scale_coeffs=np.zeros((1, 2)),
        opacity_logits=[40.0],  # opacity == 1.0 to double precision
        colors=[1.0],
    )
    values.update(overrides)
    return Scene(**values, frame_count=5, image_width=16, image_height=16)


class TestRenderFrame:
    def test_empty_scene_renders_black(self):
        img = render_frame(Scene.empty(), 0.5, 8, 8)
        assert img.shape == (8, 8)
        assert np.all(img == 0.0)

    def test_peak_value_on_pixel_center(self):
        # mean exactly on a pixel center, opacity 1, at the temporal mean
        scene = single_gaussian_scene(means=[[(8 + 0.5) / 16, (4 + 0.5) / 16]])
        img = render_frame(scene, 0.5, 16, 16)
        assert img[4, 8] == pytest.approx(1.0, abs=1e-15)
        assert img.max() == img[4, 8]

    def test_peak_bounded_by_subpixel_offset(self, rng):
        for _ in range(5):
            mean = rng.uniform(0.4, 0.6, size=2)
            scene = single_gaussian_scene(means=[mean])
            img = render_frame(scene, 0.5, 16, 16)
            col = int(np.clip(np.round(mean[0] * 16 - 0.5), 0, 15))
            row = int(np.clip(np.round(mean[1] * 16 - 0.5), 0, 15))
            dx = (col + 0.5) / 16 - mean[0]
            dy = (row + 0.5) / 16 - mean[1]
            d2 = (dx * dx + dy * dy) / 0.12**2
            assert img[row, col] >= np.exp(-0.5 * d2) - 1e-12

    def test_stacked_gaussians_clamp_to_one(self):
        one = single_gaussian_scene(opacity_logits=[np.log(9.0)])  # rho = 0.9
        two = Scene.from_gaussians([one[0], one[0]], frame_count=5)
        img = render_frame(two, 0.5, 16, 16)
        assert img.max() == 1.0

    def test_zero_size_raster_rejected(self):
        with pytest.raises(ValueError, match="empty raster"):
            render_frame(single_gaussian_scene(), 0.5, 0, 16)

    def test_determinism_bitwise(self, rng):
        scene = make_random_scene(rng, n=8)
        a = render_frame(scene, 0.37, 32, 24)
        b = render_frame(scene, 0.37, 32, 24)
        assert a.tobytes() == b.tobytes()

    def test_matches_brute_force(self, rng):
        for seed in range(4):
            scene = make_random_scene(np.random.default_rng(seed), n=6)
            t = np.random.default_rng(seed + 100).uniform(0.3, 0.7)
            fast = render_frame(scene, t, 16, 16)
            slow = brute_force_render(scene, t, 16, 16)
            assert np.abs(fast - slow).max() < 1e-3

    def test_culling_is_sound_far_from_boundaries(self, rng):
        # gaussians either well inside the cull region or far outside it;
        # the 3-sigma rule's worst-case boundary leakage is excluded by
        # construction (contributions at the edge are ~1e-2 * opacity)
        scene = make_random_scene(rng, n=8)
        scene.means[:4] += 3.0          # far off-screen
        scene.temporal_means[4:6] = 5.0  # far off-time
        t = 0.5
        fast = render_frame(scene, t, 16, 16)
        slow = brute_force_render(scene, t, 16, 16)
        assert np.abs(fast - slow).max() < 1e-3

    def test_opacity_monotonicity(self, rng):
        scene = make_random_scene(rng, n=5)
        img = render_frame(scene, 0.5, 16, 16)
        lowered = scene.copy()
        lowered.opacity_logits[2] -= 2.0
        img2 = render_frame(lowered, 0.5, 16, 16)
        assert np.all(img2 <= img + 1e-15)


class TestCull:
    def test_temporal_cull(self):
        scene = single_gaussian_scene(
            temporal_means=[0.0], log_temporal_spreads=[np.log(0.1)]
        )
        assert cull(scene, 0.5, 16, 16).size == 0  # 5 sigma away
        assert cull(scene, 0.25, 16, 16).size == 1  # 2.5 sigma

    def test_retained_at_own_time(self):
        scene = single_gaussian_scene()
        assert list(cull(scene, 0.5, 16, 16)) == [0]

    def test_offscreen_cull(self):
        scene = single_gaussian_scene(
            means=[[10.0, 10.0]], log_scales=np.log([[0.01, 0.01]])
        )
        assert cull(scene, 0.5, 16, 16).size == 0

    def test_ellipse_reaching_into_square_is_kept(self):
        # mean outside, but the 3-sigma ellipse crosses the boundary
        scene = single_gaussian_scene(
            means=[[1.2, 0.5]], log_scales=np.log([[0.1, 0.1]])
        )
        assert cull(scene, 0.5, 16, 16).size == 1
        far = single_gaussian_scene(
            means=[[1.5, 0.5]], log_scales=np.log([[0.1, 0.1]])
        )
        assert cull(far, 0.5, 16, 16).size == 0


class TestGradients:
    def loss(self, scene, t, target, l1w, ssimw):
        img = render_frame(scene, t, target.shape[1], target.shape[0])
        value = l1w * np.mean(np.abs(img - target))
        if ssimw:
            value += ssimw * (1.0 - ssim(img, target))
        return value

    def test_matches_finite_differences(self, rng):
        scene = make_random_scene(rng, n=4)
        t = 0.45
        img = render_frame(scene, t, 16, 16)
        target = safe_target(rng, img)
        l1w, ssimw = 0.8, 0.2
        _, _, grad = render_with_grad(scene, t, target, l1w, ssimw)
        h = 1e-4
        for fname in PARAM_FIELDS:
            arr = getattr(scene, fname)
            g_arr = getattr(grad, fname)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                mi = it.multi_index
                orig = arr[mi]
                arr[mi] = orig + h
                lp = self.loss(scene, t, target, l1w, ssimw)
                arr[mi] = orig - h
                lm = self.loss(scene, t, target, l1w, ssimw)
                arr[mi] = orig
                fd = (lp - lm) / (2 * h)
                an = g_arr[mi]
                err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                assert err < 1e-3, (fname, mi, an, fd)

    def test_perfect_fit_has_zero_l1_gradient(self):
        scene = single_gaussian_scene(opacity_logits=[0.0], colors=[0.6])
        target = render_frame(scene, 0.5, 16, 16)
        assert target.max() < 1.0  # interior values only
        _, parts, grad = render_with_grad(scene, 0.5, target, 1.0, 0.0)
        assert parts["l1"] == 0.0
        for name in PARAM_FIELDS:
            assert np.all(getattr(grad, name) == 0.0), name

    def test_color_gradient_hand_value(self):
        # pure L1 on a 2x2 image: dL/dc = sum sign(err) * rho * tau * g / P
        scene = single_gaussian_scene(
            means=[[0.5, 0.5]], opacity_logits=[0.0], colors=[0.5],
            log_scales=np.log([[0.4, 0.4]]),
        )
        target = np.zeros((2, 2))  # rendered > target everywhere
        rendered, _, grad = render_with_grad(scene, 0.5, target, 1.0, 0.0)
        g = scene[0]
        cg = condition_at_time(g, 0.5)
        expected = 0.0
        for r in range(2):
            for c in range(2):
                p = ((c + 0.5) / 2, (r + 0.5) / 2)
                expected += g.opacity * cg.temporal_weight * eval_density(cg, p)
        expected /= 4.0
        assert grad.colors[0] == pytest.approx(expected, rel=1e-9)

    def test_dimension_mismatch_rejected(self, rng):
        scene = make_random_scene(rng, n=2)
        with pytest.raises(ValueError):
            render_with_grad(scene, 0.5, np.zeros((4, 4, 2)), 1.0, 0.0)

    def test_clamped_pixels_block_gradient(self):
        # saturated pixel: raw > 1 means its L1 gradient must not leak back
        scene = single_gaussian_scene(opacity_logits=[np.log(9.0)])
        two = Scene.from_gaussians([scene[0], scene[0]], frame_count=5)
        raw_center = render_frame(two, 0.5, 16, 16)
        assert raw_center.max() == 1.0
        target = np.ones((16, 16)) * 0.2
        _, _, grad = render_with_grad(two, 0.5, target, 1.0, 0.0)
        # color gradient only accumulates over unclamped pixels: finite
        # differences at the saturated center would see zero change
        h = 1e-4
        base = self.loss(two, 0.5, target, 1.0, 0.0)
        two.colors[0] += h
        up = self.loss(two, 0.5, target, 1.0, 0.0)
        two.colors[0] -= 2 * h
        down = self.loss(two, 0.5, target, 1.0, 0.0)
        two.colors[0] += h
        fd = (up - down) / (2 * h)
        assert grad.colors[0] == pytest.approx(fd, rel=1e-3, abs=1e-9)
