import numpy as np
import pytest

from slicesplat.evaluate import ablation_config, leave_frame_out, linear_baseline
from slicesplat.io import DataError, FrameStack
from slicesplat.train import FramePair, TrainConfig, ibfr_sample


class TestLinearBaseline:
    def make_stack(self, rng, n=5, size=8):
        return FrameStack.from_images([rng.random((size, size)) for _ in range(n)])

    def test_exact_at_timestamps(self, rng):
        stack = self.make_stack(rng)
        for k, t in enumerate(stack.timestamps):
            assert np.array_equal(linear_baseline(stack, float(t)), stack.images[k])

    def test_midpoint_blend(self):
        stack = FrameStack.from_images([np.zeros((4, 4)), np.ones((4, 4))])
        out = linear_baseline(stack, 0.5)
        assert np.allclose(out, 0.5)

    def test_matches_ibfr_blend(self, rng):
        stack = self.make_stack(rng, n=4)
        pair = FramePair(stack.images[1], float(stack.timestamps[1]),
                         stack.images[2], float(stack.timestamps[2]))
        for alpha in (0.2, 0.45, 0.8):
            t_alpha, blended = ibfr_sample(pair, alpha)
            assert np.allclose(linear_baseline(stack, t_alpha), blended)

    def test_outside_span_rejected(self, rng):
        stack = self.make_stack(rng)
        with pytest.raises(DataError, match="outside"):
            linear_baseline(stack, 1.5)


class TestAblationConfig:
    def test_variants(self):
        cfg = TrainConfig(lambda_interp=0.4, lambda_sigma=0.1)
        assert ablation_config(cfg, "full") == cfg
        assert ablation_config(cfg, "no-ibfr").lambda_interp == 0.0
        assert ablation_config(cfg, "no-ibfr").lambda_sigma == 0.1
        assert ablation_config(cfg, "no-sigma").lambda_sigma == 0.0
        neither = ablation_config(cfg, "neither")
        assert neither.lambda_interp == 0.0 and neither.lambda_sigma == 0.0
        with pytest.raises(ValueError, match="variant"):
            ablation_config(cfg, "bogus")


class TestLeaveFrameOut:
    def test_split_is_disjoint_and_scored(self):
        from slicesplat.phantoms import translating_disk_stack
        stack = translating_disk_stack(7, 24)
        cfg = TrainConfig(iterations=40, initial_gaussian_count=24, rng_seed=0,
                          log_interval=10**6)
        result = leave_frame_out(stack, 2, cfg)
        assert set(result["train_indices"]) == {0, 2, 4, 6}
        assert set(result["test_indices"]) == {1, 3, 5}
        assert not set(result["train_indices"]) & set(result["test_indices"])
        assert "full" in result["reports"] and "linear" in result["reports"]
        assert len(result["reports"]["linear"].psnr) == 3

    def test_stride_too_large(self):
        from slicesplat.phantoms import translating_disk_stack
        stack = translating_disk_stack(5, 16)
        with pytest.raises(DataError, match="stride"):
            leave_frame_out(stack, 7, TrainConfig(iterations=5))
