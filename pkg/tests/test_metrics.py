import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicesplat.metrics import dice, evaluate_frames, iou, psnr
from slicesplat.ssim import C1, C2, WINDOW_SIZE, gaussian_window, ssim


def reference_ssim(a, b):
    """Literal sliding-window SSIM: the oracle the fast path must match."""
    taps = gaussian_window()
    w2d = np.outer(taps, taps)
    h, win = a.shape[0], WINDOW_SIZE
    ww = a.shape[1]
    values = []
    for r in range(h - win + 1):
        for c in range(ww - win + 1):
            pa = a[r:r + win, c:c + win]
            pb = b[r:r + win, c:c + win]
            mu_a = (w2d * pa).sum()
            mu_b = (w2d * pb).sum()
            var_a = (w2d * pa * pa).sum() - mu_a**2
            var_b = (w2d * pb * pb).sum() - mu_b**2
            cov = (w2d * pa * pb).sum() - mu_a * mu_b
            values.append(
                (2 * mu_a * mu_b + C1) * (2 * cov + C2)
                / ((mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2))
            )
    return float(np.mean(values))


class TestPsnr:
    def test_identical_images(self, rng):
        img = rng.random((8, 8))
        assert psnr(img, img) == np.inf

    def test_uniform_offset(self):
        a = np.zeros((10, 10))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_full_range_error(self):
        assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_symmetry(self, rng):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        assert psnr(a, b) == pytest.approx(psnr(b, a))


class TestSsim:
    def test_identical_images(self, rng):
        img = rng.random((16, 16))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_constant_zero_vs_one(self):
        a = np.zeros((12, 12))
        b = np.ones((12, 12))
        assert ssim(a, b) == pytest.approx(C1 / (1 + C1), rel=1e-9)

    def test_matches_sliding_window_reference(self, rng):
        for _ in range(6):
            shape = (rng.integers(11, 24), rng.integers(11, 24))
            a = rng.random(shape)
            b = rng.random(shape)
            assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-6)

    def test_too_small_image(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_symmetry(self, rng):
        a, b = rng.random((14, 14)), rng.random((14, 14))
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_translation_lowers_similarity(self, rng):
        img = rng.random((20, 20))
        shifted = np.roll(img, 1, axis=1)
        assert ssim(img, shifted) < 1.0


class TestOverlap:
    def test_identical_masks(self):
        m = np.zeros((6, 6))
        m[2:4, 2:4] = 1.0
        assert dice(m, m) == 1.0
        assert iou(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6))
        b = np.zeros((6, 6))
        a[0, 0] = 1.0
        b[5, 5] = 1.0
        assert dice(a, b) == 0.0
        assert iou(a, b) == 0.0

    def test_half_versus_full(self):
        a = np.zeros((4, 8))
        a[:, :4] = 1.0
        b = np.ones((4, 8))
        assert dice(a, b) == pytest.approx(2 / 3)
        assert iou(a, b) == pytest.approx(1 / 2)

    def test_both_empty_convention(self):
        z = np.zeros((5, 5))
        assert dice(z, z) == 1.0
        assert iou(z, z) == 1.0

    def test_threshold_is_strict(self):
        a = np.full((3, 3), 0.5)
        assert not np.any(a > 0.5)
        assert dice(a, np.zeros((3, 3))) == 1.0  # both binarize to empty

    @given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1), st.integers(0, 3))
    @settings(max_examples=200, deadline=None)
    def test_dice_iou_identity(self, bits_a, bits_b, seed):
        # dice == 2 iou / (1 + iou), exactly, for arbitrary 4x4 masks
        a = np.array([(bits_a >> k) & 1 for k in range(16)], dtype=float).reshape(4, 4)
        b = np.array([(bits_b >> k) & 1 for k in range(16)], dtype=float).reshape(4, 4)
        d = dice(a, b)
        j = iou(a, b)
        assert abs(d - 2 * j / (1 + j)) < 1e-12

    def test_symmetry(self, rng):
        a = (rng.random((7, 7)) > 0.5).astype(float)
        b = (rng.random((7, 7)) > 0.5).astype(float)
        assert dice(a, b) == dice(b, a)
        assert iou(a, b) == iou(b, a)

    def test_iou_never_exceeds_dice(self, rng):
        for _ in range(25):
            a = (rng.random((6, 6)) > 0.4).astype(float)
            b = (rng.random((6, 6)) > 0.6).astype(float)
            assert iou(a, b) <= dice(a, b) + 1e-12


class TestReport:
    def test_aggregation_and_serialization(self, rng):
        rendered = [rng.random((12, 12)) for _ in range(3)]
        targets = [r + 0.05 for r in rendered]
        report = evaluate_frames(rendered, targets, label="x", frame_ids=[1, 3, 5])
        assert report.psnr.shape == (3,)
        lines = report.to_json_lines().strip().splitlines()
        assert len(lines) == 4  # three frames + summary
        assert '"frame": 3' in lines[1]
        assert '"summary"' in lines[-1]
