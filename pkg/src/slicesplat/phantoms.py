"""Synthetic slice stacks used by the demos and the test suite.

Disk phantoms have a ~1.5 pixel linear intensity ramp at the boundary
(an ideal antialiased edge); mask phantoms are strictly binary.
"""

from __future__ import annotations

import numpy as np

from .io import FrameStack


def _pixel_grid(size):
    coords = (np.arange(size) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="xy")


def disk_image(size: int, cx: float, cy: float, radius: float,
               intensity: float = 0.85, edge_px: float = 1.5) -> np.ndarray:
    """Antialiased disk on a black background, normalized coordinates."""
    xx, yy = _pixel_grid(size)
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    ramp = np.clip((radius - d) / (edge_px / size) + 0.5, 0.0, 1.0)
    return intensity * ramp


def disk_mask(size: int, cx: float, cy: float, radius: float) -> np.ndarray:
    """Hard binary disk (values exactly 0 or 1)."""
    xx, yy = _pixel_grid(size)
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return (d2 <= radius * radius).astype(float)


def uniform_stack(n_frames: int = 5, size: int = 32, value: float = 0.5) -> FrameStack:
    """Constant-gray frames; the simplest possible fitting target."""
    return FrameStack.from_images(
        [np.full((size, size), value) for _ in range(n_frames)]
    )


def translating_disk_stack(n_frames: int = 17, size: int = 64,
                           radius: float = 0.16, intensity: float = 0.85,
                           x0: float = 0.3, x1: float = 0.7,
                           y: float = 0.5) -> FrameStack:
    """A disk translating linearly across the frame."""
    images = []
    for k in range(n_frames):
        t = k / (n_frames - 1)
        images.append(disk_image(size, x0 + (x1 - x0) * t, y, radius, intensity))
    return FrameStack.from_images(images)


def sinusoidal_disk_stack(n_frames: int = 33, size: int = 64,
                          radius: float = 0.14, intensity: float = 0.85,
                          amp_x: float = 0.2, amp_y: float = 0.08,
                          pulse: float = 0.12) -> FrameStack:
    """A disk on a smooth sinusoidal path with a mild radius pulsation.

    Motion between adjacent frames is a sizable fraction of the radius, so
    voxel-wise blending of neighbors ghosts badly while a motion model can
    track the disk.
    """
    images = []
    for k in range(n_frames):
        t = k / (n_frames - 1)
        cx = 0.5 + amp_x * np.sin(2.0 * np.pi * 0.75 * t)
        cy = 0.5 + amp_y * np.sin(2.0 * np.pi * 0.5 * t + 0.7)
        r = radius * (1.0 + pulse * np.sin(2.0 * np.pi * t))
        images.append(disk_image(size, cx, cy, r, intensity))
    return FrameStack.from_images(images)


def sphere_mask_stack(n_slices: int = 33, size: int = 64,
                      radius: float = 0.3,
                      center: tuple = (0.5, 0.5, 0.5)) -> FrameStack:
    """Binary cross-sections of a sphere, slice k at z = k/(n_slices-1)."""
    cx, cy, cz = center
    images = []
    for k in range(n_slices):
        z = k / (n_slices - 1)
        chord = radius * radius - (z - cz) ** 2
        if chord <= 0:
            images.append(np.zeros((size, size)))
        else:
            images.append(disk_mask(size, cx, cy, np.sqrt(chord)))
    return FrameStack.from_images(images)


def sphere_surface_points(count: int = 20000, radius: float = 0.3,
                          center: tuple = (0.5, 0.5, 0.5),
                          seed: int = 0) -> np.ndarray:
    """Uniform points on the analytic sphere surface (test reference)."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + radius * v
