"""Frame-stack ingestion, PGM image files, and scene serialization.

Frames are binary PGM (P5), 8- or 16-bit, normalized to [0, 1] by the
file's declared maxval.  Scenes persist to a little-endian ``MGS1``
container: a fixed header followed by float32 parameter arrays in the
canonical field order.  Raw float volumes (``MVOL1``, see
:mod:`slicesplat.mesh`) are the secondary ingestion path.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MODE_INTERPOLATION, MODE_MESH, PARAM_FIELDS, Scene


class DataError(ValueError):
    """Unusable input data (bad files, mismatched dimensions, ...)."""


SCENE_MAGIC = b"MGS1"
_MODE_CODES = {MODE_INTERPOLATION: 0, MODE_MESH: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


@dataclass
class FrameStack:
    """Ordered grayscale frames with normalized timestamps.

    ``source_indices`` remember each frame's position in the stack it was
    loaded from, so leave-frame-out subsets keep their original timestamps.
    """

    images: list
    timestamps: np.ndarray
    source_indices: list = field(default_factory=list)

    def __post_init__(self):
        self.images = [np.asarray(img, dtype=float) for img in self.images]
        if len(self.images) < 2:
            raise DataError("a frame stack needs at least 2 frames")
        shape = self.images[0].shape
        for i, img in enumerate(self.images):
            if img.shape != shape:
                raise DataError(
                    f"frame {i} has shape {img.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(img)):
                raise DataError(f"frame {i} contains non-finite values")
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.timestamps) != len(self.images):
            raise DataError("timestamps do not match frame count")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if self.timestamps[0] < 0 or self.timestamps[-1] > 1:
            raise DataError("timestamps must lie in [0, 1]")
        if not self.source_indices:
            self.source_indices = list(range(len(self.images)))

    def __len__(self):
        return len(self.images)

    @property
    def height(self):
        return self.images[0].shape[0]

    @property
    def width(self):
        return self.images[0].shape[1]

    @classmethod
    def from_images(cls, images) -> "FrameStack":
        images = list(images)
        m = len(images)
        if m < 2:
            raise DataError("a frame stack needs at least 2 frames")
        return cls(images=images, timestamps=np.arange(m) / (m - 1))


def subsample(stack: FrameStack, stride: int):
    """Split into a strided training stack and its held-out complement.

    Training frames are positions ``0, stride, 2*stride, ...``; both halves
    keep their original timestamps, so the training subset stays equispaced
    and held-out times are exactly where the dropped frames were.
    """
    m = len(stack)
    if stride < 1:
        raise DataError("stride must be >= 1")
    if stride >= m:
        raise DataError(f"stride {stride} >= frame count {m}")
    train_pos = list(range(0, m, stride))
    test_pos = [i for i in range(m) if i % stride != 0]
    if not test_pos:
        warnings.warn("stride 1 leaves an empty held-out set")
    train = FrameStack(
        images=[stack.images[i] for i in train_pos],
        timestamps=stack.timestamps[train_pos],
        source_indices=[stack.source_indices[i] for i in train_pos],
    )
    if test_pos:
        test = FrameStack(
            images=[stack.images[i] for i in test_pos],
            timestamps=stack.timestamps[test_pos],
            source_indices=[stack.source_indices[i] for i in test_pos],
        ) if len(test_pos) >= 2 else _single_frame_stack(stack, test_pos[0])
    else:
        test = None
    return train, test


def _single_frame_stack(stack, pos):
    # FrameStack requires >= 2 frames; a single held-out frame is returned
    # as a degenerate namespace-alike for uniform downstream handling
    sub = FrameStack.__new__(FrameStack)
    sub.images = [stack.images[pos]]
    sub.timestamps = np.asarray([stack.timestamps[pos]])
    sub.source_indices = [stack.source_indices[pos]]
    return sub


# ---------------------------------------------------------------------------
# PGM (P5)

def _read_pgm_tokens(data: bytes, count: int, path):
    """Header tokens after the magic, skipping whitespace and # comments."""
    tokens = []
    pos = 2  # after b"P5"
    while len(tokens) < count:
        if pos >= len(data):
            raise DataError(f"{path}: truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace byte separates header and raster


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float image normalized by its maxval."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5) file")
    try:
        (w, h, maxval), offset = _read_pgm_tokens(data, 3, path)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if w <= 0 or h <= 0:
        raise DataError(f"{path}: invalid PGM dimensions {w}x{h}")
    if not (0 < maxval < 65536):
        raise DataError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise DataError(f"{path}: truncated PGM raster")
    img = np.frombuffer(raster, dtype=dtype).reshape(h, w)
    return img.astype(float) / maxval


def write_pgm(img, path, maxval: int = 255) -> None:
    """Write a [0, 1] float image as binary PGM (8-bit, or 16-bit big-endian)."""
    if not (0 < maxval < 65536):
        raise DataError(f"unsupported PGM maxval {maxval}")
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise DataError("PGM images must be 2D")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        f.write(q.astype(dtype).tobytes())


def load_frame_stack(path, pattern: str = "*.pgm") -> FrameStack:
    """Load a stack from a directory of PGMs or a single ``.mvol`` volume.

    Directory entries are ordered lexicographically; frame ``k`` of ``M``
    gets timestamp ``k/(M-1)``.  Freehand pose files are rejected: frames
    are modeled as parallel equispaced planes.
    """
    path = Path(path)
    if path.is_file() and path.suffix == ".mvol":
        from .mesh import read_volume
        return frame_stack_from_volume(read_volume(path))
    if not path.is_dir():
        raise DataError(f"{path}: not a directory of frames")
    poses = sorted(path.glob("*.pose")) + sorted(path.glob("pose*.*"))
    if poses:
        raise DataError(
            f"{poses[0]}: freehand pose files are not supported; frames are "
            "ingested as parallel equispaced planes"
        )
    files = sorted(path.glob(pattern))
    if len(files) < 2:
        raise DataError(f"{path}: found {len(files)} frame(s), need at least 2")
    images = []
    for f in files:
        img = read_pgm(f)
        if images and img.shape != images[0].shape:
            raise DataError(
                f"{f.name} has shape {img.shape} but {files[0].name} has "
                f"{images[0].shape}"
            )
        images.append(img)
    return FrameStack.from_images(images)


def frame_stack_from_volume(vol) -> FrameStack:
    """Treat a scalar volume's z slices as a frame stack."""
    nz = vol.values.shape[0]
    if nz < 2:
        raise DataError("volume has fewer than 2 slices")
    return FrameStack.from_images([vol.values[k] for k in range(nz)])


# ---------------------------------------------------------------------------
# MGS1 scene files

_HEADER = struct.Struct("<4s7I")


def _param_shapes(n, motion_degree, scale_degree):
    return {
        "means": (n, 2),
        "temporal_means": (n,),
        "log_temporal_spreads": (n,),
        "rotations": (n,),
        "log_scales": (n, 2),
        "motion_coeffs": (n, 2, motion_degree),
        "scale_coeffs": (n, scale_degree),
        "opacity_logits": (n,),
        "colors": (n,),
    }


def save_scene(scene: Scene, path) -> None:
    """Serialize a scene; parameters are stored as little-endian float32."""
    n = len(scene)
    header = _HEADER.pack(
        SCENE_MAGIC, n, scene.frame_count, scene.image_width,
        scene.image_height, _MODE_CODES[scene.mode], scene.motion_degree,
        scene.scale_degree,
    )
    with open(path, "wb") as f:
        f.write(header)
        for name in PARAM_FIELDS:
            f.write(np.ascontiguousarray(
                getattr(scene, name), dtype="<f4"
            ).tobytes())


def load_scene(path) -> Scene:
    """Load an ``MGS1`` scene file saved by :func:`save_scene`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated scene file (incomplete header)")
    magic, n, frame_count, width, height, mode_code, mdeg, sdeg = \
        _HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        if magic[:3] == SCENE_MAGIC[:3]:
            raise DataError(
                f"{path}: unsupported scene file version {magic!r}"
            )
        raise DataError(f"{path}: bad magic {magic!r}, not a scene file")
    if mode_code not in _MODE_NAMES:
        raise DataError(f"{path}: unknown mode code {mode_code}")
    shapes = _param_shapes(n, mdeg, sdeg)
    arrays = {}
    offset = _HEADER.size
    for name in PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        nbytes = 4 * count
        if offset + nbytes > len(data):
            raise DataError(f"{path}: truncated payload in field {name!r}")
        arrays[name] = np.frombuffer(
            data, dtype="<f4", count=count, offset=offset
        ).astype(float).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes")
    return Scene(
        **arrays, frame_count=frame_count, image_width=width,
        image_height=height, mode=_MODE_NAMES[mode_code],
    )
