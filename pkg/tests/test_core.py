import numpy as np
import pytest

from slicesplat.core import (
    FoldedGaussian,
    Scene,
    condition_at_time,
    cov_from_params,
    eval_density,
    poly_eval,
)

from conftest import make_random_scene


def simple_gaussian(**overrides):
    params = dict(
        mean=(0.5, 0.5),
        temporal_mean=0.5,
        log_temporal_spread=np.log(0.3),
        rotation=0.0,
        log_scales=(np.log(0.1), np.log(0.1)),
        motion_coeffs=np.zeros((2, 3)),
        scale_coeffs=np.zeros(2),
        opacity_logit=0.0,
        color=1.0,
    )
    params.update(overrides)
    return FoldedGaussian(**params)


class TestPolyEval:
    def test_linear(self):
        assert poly_eval([1.0], 0.2) == pytest.approx(0.2)

    def test_zero_at_origin(self):
        # no constant term by construction
        for coeffs in ([3.0], [1.0, -2.0, 0.5], np.arange(7.0)):
            assert poly_eval(coeffs, 0.0) == 0.0

    def test_quadratic(self):
        assert poly_eval([0.0, 1.0], 0.5) == pytest.approx(0.25)

    def test_matches_power_sum(self, rng):
        for _ in range(20):
            coeffs = rng.normal(size=rng.integers(1, 8))
            u = rng.uniform(-1, 1)
            expected = sum(c * u ** (j + 1) for j, c in enumerate(coeffs))
            assert poly_eval(coeffs, u) == pytest.approx(expected, rel=1e-12)


class TestCovFromParams:
    def test_identity(self):
        assert np.allclose(cov_from_params(0.0, (0.0, 0.0)), np.eye(2))

    def test_quarter_turn_swaps_axes(self):
        cov = cov_from_params(np.pi / 2, (np.log(2.0), 0.0))
        assert np.allclose(cov, np.diag([1.0, 4.0]), atol=1e-12)

    def test_symmetric_positive_definite(self, rng):
        for _ in range(50):
            cov = cov_from_params(rng.uniform(-10, 10), rng.normal(size=2))
            assert np.allclose(cov, cov.T)
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_eigenvalue_round_trip(self, rng):
        for _ in range(25):
            log_scales = rng.uniform(-3, 1, size=2)
            cov = cov_from_params(rng.uniform(-np.pi, np.pi), log_scales)
            eig = np.sort(np.linalg.eigvalsh(cov))
            assert np.allclose(eig, np.sort(np.exp(2 * log_scales)), atol=1e-9)


class TestConditionAtTime:
    def test_zero_polynomials_fix_the_gaussian(self):
        g = simple_gaussian()
        for t in (0.0, 0.3, 0.9):
            cg = condition_at_time(g, t)
            assert np.allclose(cg.mean, g.mean)
            assert np.allclose(cg.cov, g.spatial_cov())

    def test_anchored_at_temporal_mean(self, rng):
        g = simple_gaussian(
            motion_coeffs=rng.normal(size=(2, 5)),
            scale_coeffs=rng.normal(size=2),
            temporal_mean=0.8,
        )
        cg = condition_at_time(g, 0.8)
        assert np.allclose(cg.mean, g.mean)
        assert np.allclose(cg.cov, g.spatial_cov())
        assert cg.temporal_weight == pytest.approx(1.0)

    def test_linear_shift_hand_value(self):
        g = simple_gaussian(
            mean=(0.4, 0.6),
            motion_coeffs=np.array([[1.0], [0.0]]),
            temporal_mean=0.8,
        )
        cg = condition_at_time(g, 0.6)  # u = 0.2
        assert np.allclose(cg.mean, (0.6, 0.6), atol=1e-12)

    def test_cov_inverse_consistent(self, rng):
        g = simple_gaussian(
            rotation=0.7,
            motion_coeffs=rng.normal(size=(2, 4)),
            scale_coeffs=rng.normal(size=2) * 0.3,
        )
        cg = condition_at_time(g, 0.35)
        assert np.allclose(cg.cov_inverse @ cg.cov, np.eye(2), atol=1e-9)

    def test_continuity_in_time(self, rng):
        g = simple_gaussian(motion_coeffs=rng.normal(size=(2, 7)))
        delta = 1e-6
        for t in (0.1, 0.5, 0.9):
            a = condition_at_time(g, t).mean
            b = condition_at_time(g, t + delta).mean
            # bound ~ |f'| * delta with a generous constant
            bound = (np.abs(g.motion_coeffs).sum() * 7 + 1.0) * delta * 10
            assert np.linalg.norm(a - b) < bound

    def test_degree_one_mean_affine_in_time(self, rng):
        g = simple_gaussian(motion_coeffs=rng.normal(size=(2, 1)))
        t1, t3 = 0.2, 0.8
        t2 = 0.5 * (t1 + t3)
        m1 = condition_at_time(g, t1).mean
        m2 = condition_at_time(g, t2).mean
        m3 = condition_at_time(g, t3).mean
        assert np.allclose(m1 + m3, 2 * m2, atol=1e-9)

    def test_temporal_weight_peaks_at_mean(self):
        g = simple_gaussian(temporal_mean=0.4)
        ts = np.linspace(0, 1, 101)
        weights = [condition_at_time(g, t).temporal_weight for t in ts]
        assert 0 < min(weights) and max(weights) <= 1.0
        assert ts[int(np.argmax(weights))] == pytest.approx(0.4)


class TestEvalDensity:
    def test_peak_at_mean(self):
        cg = condition_at_time(simple_gaussian(), 0.5)
        assert eval_density(cg, (0.5, 0.5)) == pytest.approx(1.0)

    def test_unit_distance_identity_cov(self):
        g = simple_gaussian(log_scales=(0.0, 0.0))
        cg = condition_at_time(g, 0.5)
        assert eval_density(cg, (1.5, 0.5)) == pytest.approx(np.exp(-0.5))

    def test_mahalanobis_three(self):
        g = simple_gaussian(log_scales=(np.log(0.2), np.log(0.2)))
        cg = condition_at_time(g, 0.5)
        p = (0.5 + 3 * 0.2, 0.5)
        assert eval_density(cg, p) == pytest.approx(np.exp(-4.5))


class TestScene:
    def test_round_trip_through_gaussians(self, rng):
        scene = make_random_scene(rng, n=5)
        rebuilt = Scene.from_gaussians(
            [scene[i] for i in range(len(scene))],
            frame_count=scene.frame_count,
            image_width=scene.image_width,
            image_height=scene.image_height,
        )
        for name, arr in scene.param_arrays().items():
            assert np.array_equal(arr, getattr(rebuilt, name)), name

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            make_bad = Scene.empty(mode="interpolation")
            make_bad.mode = "nope"
            Scene(**make_bad.param_arrays(), mode="nope")

    def test_rejects_single_frame_count(self):
        with pytest.raises(ValueError, match="frame_count"):
            Scene(**Scene.empty().param_arrays(), frame_count=1)

    def test_check_finite(self, rng):
        scene = make_random_scene(rng, n=3)
        scene.colors[1] = np.nan
        with pytest.raises(ValueError, match="colors"):
            scene.check_finite()
