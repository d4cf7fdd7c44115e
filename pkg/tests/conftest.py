import numpy as np
import pytest

from slicesplat.core import Scene


def make_random_scene(rng, n=6, motion_degree=7, scale_degree=2,
                      frame_count=9, width=16, height=16,
                      opacity_range=(-3.0, -1.0), color_range=(0.2, 0.9)):
    """Random scene away from culling/clamp kinks (finite-difference safe).

    Means stay inside the image (the spatial cull can't flip), temporal
    offsets stay well under 3 sigma_t, and amplitudes are low enough that
    raw pixel sums stay inside (0, 1).
    """
    return Scene(
        means=rng.uniform(0.15, 0.85, size=(n, 2)),
        temporal_means=rng.uniform(0.3, 0.7, size=n),
        log_temporal_spreads=np.log(rng.uniform(0.25, 0.6, size=n)),
        rotations=rng.uniform(-np.pi, np.pi, size=n),
        log_scales=np.log(rng.uniform(0.06, 0.2, size=(n, 2))),
        motion_coeffs=rng.normal(0.0, 0.1, size=(n, 2, motion_degree)),
        scale_coeffs=rng.normal(0.0, 0.2, size=(n, scale_degree)),
        opacity_logits=rng.uniform(*opacity_range, size=n),
        colors=rng.uniform(*color_range, size=n),
        frame_count=frame_count,
        image_width=width,
        image_height=height,
    )


def safe_target(rng, rendered, lo=0.03, hi=0.2):
    """A target a finite margin away from the rendering at every pixel.

    Keeps finite differences of the L1 sign subgradient exact.
    """
    off = rng.uniform(lo, hi, size=rendered.shape)
    return np.where(rendered < 0.5, rendered + off, rendered - off)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
