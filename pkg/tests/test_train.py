import numpy as np
import pytest

from slicesplat.core import PARAM_FIELDS, Scene
from slicesplat.phantoms import translating_disk_stack, uniform_stack
from slicesplat.render import GradientBuffer, render_frame
from slicesplat.train import (
    AdamState,
    FramePair,
    NumericalError,
    TrainConfig,
    adam_step,
    densify_and_prune,
    ibfr_sample,
    loss_interp,
    loss_mesh,
    loss_sigma,
    loss_sigma_grad,
    train,
)

from conftest import make_random_scene


def make_pair(a, b, t0=0.0, t1=0.5):
    return FramePair(earlier=a, earlier_time=t0, later=b, later_time=t1)


class TestIbfrSample:
    def test_symmetric_blend(self):
        pair = make_pair(np.zeros((4, 4)), np.ones((4, 4)))
        t, img = ibfr_sample(pair, 0.5)
        assert np.all(img == 0.5)
        assert t == pytest.approx(0.25)  # midpoint of 0.0 and 0.5

    def test_equal_frames_blend_to_themselves(self, rng):
        frame = rng.random((5, 5))
        pair = make_pair(frame, frame.copy())
        for alpha in (0.2, 0.5, 0.8):
            _, img = ibfr_sample(pair, alpha)
            assert np.allclose(img, frame)

    def test_alpha_weights_earlier_frame(self):
        pair = make_pair(np.ones((3, 3)), np.zeros((3, 3)))
        _, img = ibfr_sample(pair, 0.2)
        assert np.allclose(img, 0.2)

    def test_alpha_out_of_range(self):
        pair = make_pair(np.zeros((3, 3)), np.ones((3, 3)))
        with pytest.raises(ValueError, match="alpha"):
            ibfr_sample(pair, 0.1)

    def test_pair_validation(self):
        with pytest.raises(ValueError, match="increasing"):
            make_pair(np.zeros((3, 3)), np.ones((3, 3)), t0=0.5, t1=0.5)
        with pytest.raises(ValueError, match="dimensions"):
            FramePair(np.zeros((3, 3)), 0.0, np.zeros((4, 3)), 1.0)


def scene_with_spreads(spreads, frame_count=10):
    n = len(spreads)
    return Scene(
        means=np.full((n, 2), 0.5),
        temporal_means=np.full(n, 0.5),
        log_temporal_spreads=np.log(spreads),
        rotations=np.zeros(n),
        log_scales=np.full((n, 2), np.log(0.1)),
        motion_coeffs=np.zeros((n, 2, 2)),
        scale_coeffs=np.zeros((n, 1)),
        opacity_logits=np.zeros(n),
        colors=np.full(n, 0.5),
        frame_count=frame_count,
    )


class TestLossSigma:
    def test_below_band(self):
        scene = scene_with_spreads([0.05], frame_count=10)
        assert loss_sigma(scene) == pytest.approx(0.15)

    def test_inside_band(self):
        scene = scene_with_spreads([0.5], frame_count=10)
        assert loss_sigma(scene) == 0.0

    def test_mixed(self):
        scene = scene_with_spreads([1.2, 0.5], frame_count=10)
        assert loss_sigma(scene) == pytest.approx(0.1)

    def test_zero_iff_in_band(self, rng):
        for _ in range(20):
            spreads = rng.uniform(0.01, 1.5, size=4)
            scene = scene_with_spreads(spreads, frame_count=8)
            in_band = np.all((spreads >= 2 / 8) & (spreads <= 1.0))
            assert (loss_sigma(scene) == 0.0) == in_band

    def test_subgradient_signs(self):
        scene = scene_with_spreads([0.05, 0.5, 1.3], frame_count=10)
        grad = loss_sigma_grad(scene)
        # d/d log sigma = (+-1/n) * sigma outside the band, 0 inside
        assert grad[0] == pytest.approx(-0.05 / 3)
        assert grad[1] == 0.0
        assert grad[2] == pytest.approx(1.3 / 3)

    def test_empty_scene(self):
        assert loss_sigma(Scene.empty()) == 0.0


class TestLossAssembly:
    def test_perfect_reconstruction_zero_total(self, rng):
        scene = scene_with_spreads([0.5, 0.4], frame_count=10)
        frames = [rng.random((16, 16)) for _ in range(2)]
        cfg = TrainConfig()
        total, parts = loss_interp(frames, [f.copy() for f in frames],
                                   frames, [f.copy() for f in frames],
                                   scene, cfg)
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_weight_zeroing_reduces_to_l1_ssim(self, rng):
        scene = scene_with_spreads([0.05], frame_count=10)  # out of band
        a = [rng.random((16, 16))]
        b = [rng.random((16, 16))]
        cfg = TrainConfig(lambda_interp=0.0, lambda_sigma=0.0)
        total, parts = loss_interp(a, b, [], [], scene, cfg)
        assert total == pytest.approx(
            cfg.lambda_l1 * parts["l1"] + cfg.lambda_ssim * parts["dssim"])

    def test_constant_offset_pure_l1(self):
        scene = scene_with_spreads([0.5], frame_count=10)
        a = [np.full((12, 12), 0.6)]
        b = [np.full((12, 12), 0.5)]
        cfg = TrainConfig(lambda_l1=1.0, lambda_ssim=0.0, lambda_interp=0.0,
                          lambda_sigma=0.0)
        total, _ = loss_interp(a, b, [], [], scene, cfg)
        assert total == pytest.approx(0.1)

    def test_mesh_equals_interp_without_ssim_interp(self, rng):
        scene = scene_with_spreads([0.05, 0.9], frame_count=10)
        rendered = [rng.random((16, 16)) for _ in range(2)]
        targets = [rng.random((16, 16)) for _ in range(2)]
        cfg = TrainConfig(lambda_l1=0.7, lambda_sigma=0.3)
        mesh_total, _ = loss_mesh(rendered, targets, scene, cfg)
        from dataclasses import replace
        interp_total, _ = loss_interp(
            rendered, targets, [], [], scene,
            replace(cfg, lambda_ssim=0.0, lambda_interp=0.0))
        assert mesh_total == pytest.approx(interp_total)

    def test_dimension_mismatch(self, rng):
        scene = scene_with_spreads([0.5])
        with pytest.raises(ValueError):
            loss_interp([rng.random((4, 4))], [rng.random((5, 4))], [], [],
                        scene, TrainConfig())


class TestAdam:
    def test_zero_gradient_keeps_parameters(self, rng):
        scene = make_random_scene(rng, n=3)
        before = {f: getattr(scene, f).copy() for f in PARAM_FIELDS}
        state = AdamState.zeros_for(scene)
        grad = GradientBuffer.zeros_for(scene)
        lrs = TrainConfig().learning_rates(0)
        adam_step(scene, grad, state, lrs)
        for f in PARAM_FIELDS:
            assert np.array_equal(getattr(scene, f), before[f])

    def test_first_step_magnitude_is_lr(self, rng):
        scene = make_random_scene(rng, n=2)
        state = AdamState.zeros_for(scene)
        grad = GradientBuffer.zeros_for(scene)
        grad.colors[:] = 0.37  # arbitrary nonzero constant
        before = scene.colors.copy()
        lrs = TrainConfig().learning_rates(0)
        adam_step(scene, grad, state, lrs)
        # bias-corrected m/sqrt(v) is sign(g) on the first step
        assert np.allclose(np.abs(scene.colors - before), lrs["color"], rtol=1e-9)

    def test_non_finite_gradient_names_offender(self, rng):
        scene = make_random_scene(rng, n=3)
        state = AdamState.zeros_for(scene)
        grad = GradientBuffer.zeros_for(scene)
        grad.rotations[1] = np.nan
        with pytest.raises(ValueError, match="rotations.*gaussian 1"):
            adam_step(scene, grad, state, TrainConfig().learning_rates(0))

    def test_state_remap_after_densify(self, rng):
        scene = make_random_scene(rng, n=4)
        state = AdamState.zeros_for(scene)
        state.m["colors"][:] = [1.0, 2.0, 3.0, 4.0]
        source = np.array([2, 0, -1])
        remapped = state.remap(scene, source)
        assert np.allclose(remapped.m["colors"], [3.0, 1.0, 0.0])


class TestDensifyPrune:
    def test_untouched_when_quiet(self, rng):
        scene = make_random_scene(rng, n=5, opacity_range=(0.0, 1.0))
        cfg = TrainConfig()
        out, source, stats = densify_and_prune(
            scene, np.zeros(5), cfg, np.random.default_rng(0))
        assert len(out) == 5
        assert stats == {"cloned": 0, "split": 0, "pruned": 0}
        assert np.array_equal(source, np.arange(5))
        for f in PARAM_FIELDS:
            assert np.array_equal(getattr(out, f), getattr(scene, f))

    def test_prunes_transparent(self, rng):
        scene = make_random_scene(rng, n=4, opacity_range=(0.0, 1.0))
        scene.opacity_logits[2] = np.log(1e-4 / (1 - 1e-4))
        cfg = TrainConfig()
        out, source, stats = densify_and_prune(
            scene, np.zeros(4), cfg, np.random.default_rng(0))
        assert stats["pruned"] == 1
        assert len(out) == 3
        assert 2 not in source

    def test_never_prunes_above_threshold(self, rng):
        scene = make_random_scene(rng, n=6, opacity_range=(0.0, 1.0))
        cfg = TrainConfig()
        assert np.all(scene.opacities >= cfg.prune_opacity_threshold)
        out, _, stats = densify_and_prune(
            scene, np.zeros(6), cfg, np.random.default_rng(0))
        assert stats["pruned"] == 0 and len(out) == 6

    def test_small_gaussian_cloned(self, rng):
        scene = make_random_scene(rng, n=3, opacity_range=(0.0, 1.0))
        scene.log_scales[:] = np.log(0.005)  # under 1% of image width
        grads = np.array([0.0, 1.0, 0.0])
        cfg = TrainConfig(densify_grad_threshold=0.5)
        out, source, stats = densify_and_prune(
            scene, grads, cfg, np.random.default_rng(0))
        assert stats == {"cloned": 1, "split": 0, "pruned": 0}
        assert len(out) == 4
        # the clone sits 0.1 major-axis sigmas from its parent
        clone_mean = out.means[-1]
        d = np.linalg.norm(clone_mean - scene.means[1])
        assert d == pytest.approx(0.1 * 0.005)

    def test_large_gaussian_split(self, rng):
        scene = make_random_scene(rng, n=3, opacity_range=(0.0, 1.0))
        scene.log_scales[1] = np.log([0.08, 0.02])
        grads = np.array([0.0, 1.0, 0.0])
        cfg = TrainConfig(densify_grad_threshold=0.5)
        out, source, stats = densify_and_prune(
            scene, grads, cfg, np.random.default_rng(0))
        assert stats["split"] == 1
        assert len(out) == 4  # parent replaced by two children
        children = out.means[-2:]
        assert np.allclose(np.exp(out.log_scales[-2:]),
                           np.exp(scene.log_scales[1]) / 1.6)
        # children straddle the parent symmetrically
        assert np.allclose(children.mean(axis=0), scene.means[1], atol=1e-12)

    def test_misaligned_accumulator_rejected(self, rng):
        scene = make_random_scene(rng, n=3)
        with pytest.raises(ValueError, match="aligned"):
            densify_and_prune(scene, np.zeros(5), TrainConfig(),
                              np.random.default_rng(0))


class TestTrainLoop:
    def test_uniform_gray_converges(self):
        stack = uniform_stack(4, 24, value=0.5)
        cfg = TrainConfig(iterations=2000, initial_gaussian_count=48,
                          rng_seed=3, densify_start=10**9, lambda_ssim=0.0,
                          log_interval=1000)
        history = []
        scene = train(stack, cfg, history=history)
        assert history[-1]["total"] < 1e-3

    def test_same_seed_bit_identical(self):
        stack = translating_disk_stack(5, 24)
        cfg = TrainConfig(iterations=60, initial_gaussian_count=32, rng_seed=11,
                          log_interval=1000)
        a = train(stack, cfg)
        b = train(stack, cfg)
        for f in PARAM_FIELDS:
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()

    def test_different_seed_differs(self):
        stack = translating_disk_stack(5, 24)
        cfg1 = TrainConfig(iterations=30, initial_gaussian_count=32, rng_seed=1,
                           log_interval=1000)
        cfg2 = TrainConfig(iterations=30, initial_gaussian_count=32, rng_seed=2,
                           log_interval=1000)
        a = train(stack, cfg1)
        b = train(stack, cfg2)
        assert not np.array_equal(a.means, b.means)

    def test_mesh_mode_disables_ibfr_and_ssim(self):
        stack = uniform_stack(4, 24, value=1.0)
        cfg = TrainConfig(iterations=20, initial_gaussian_count=16, rng_seed=0,
                          mode="mesh", log_interval=1000)
        history = []
        train(stack, cfg, history=history)
        assert all(h["interp"] == 0.0 and h["dssim"] == 0.0 for h in history)

    def test_mesh_mode_motion_degree_default(self):
        stack = uniform_stack(4, 24)
        cfg = TrainConfig(iterations=5, initial_gaussian_count=8, rng_seed=0,
                          mode="mesh", log_interval=1000)
        scene = train(stack, cfg)
        assert scene.motion_degree == 2
        assert scene.mode == "mesh"

    def test_non_finite_loss_aborts_with_diagnostics(self):
        stack = uniform_stack(3, 24)
        stack.images[0][0, 0] = np.nan  # corrupt after construction
        cfg = TrainConfig(iterations=50, initial_gaussian_count=8, rng_seed=0,
                          log_interval=1000)
        with pytest.raises(NumericalError, match="iteration 0"):
            train(stack, cfg)

    def test_rejects_non_finite_frames_at_load(self):
        bad = np.full((8, 8), 0.5)
        bad[2, 2] = np.inf
        from slicesplat.io import DataError, FrameStack
        with pytest.raises(DataError, match="finite"):
            FrameStack(images=[bad, np.zeros((8, 8))], timestamps=[0.0, 1.0])


class TestConfig:
    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError, match="lambda_l1"):
            TrainConfig(lambda_l1=-0.1)

    def test_rejects_bad_alpha_range(self):
        with pytest.raises(ValueError, match="alpha"):
            TrainConfig(ibfr_alpha_range=(0.8, 0.2))

    def test_mode_motion_degree_defaults(self):
        assert TrainConfig(mode="interpolation").resolved_motion_degree == 7
        assert TrainConfig(mode="mesh").resolved_motion_degree == 2
        assert TrainConfig(mode="mesh", motion_degree=4).resolved_motion_degree == 4

    def test_densify_stop_default(self):
        assert TrainConfig(iterations=1000).resolved_densify_stop == 700

    def test_round_trip_dict(self):
        cfg = TrainConfig(lambda_sigma=0.3, iterations=123, rng_seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
