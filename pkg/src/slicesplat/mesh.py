"""Dense volume rendering, marching cubes, surface sampling, mesh metrics.

The volume convention matches the renderer: voxel (i, j, k) sits at world
position ``((i+0.5)*sx, (j+0.5)*sy, k*sz)``, i.e. slice k is a frame
rendered at time ``k/(nz-1)`` and the z axis is the (scaled) time axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .core import Scene
from .render import render_frame

VOLUME_MAGIC = b"MVOL1"


@dataclass
class ScalarVolume:
    """A scalar field sampled on a regular grid, slices along z.

    ``values`` has shape (nz, ny, nx) with all entries in [0, 1];
    ``spacing`` is (sx, sy, sz) in world units.
    """

    values: np.ndarray
    spacing: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("volume values must be 3D (nz, ny, nx)")
        sx, sy, sz = self.spacing
        if min(sx, sy, sz) <= 0:
            raise ValueError("voxel spacings must be positive")
        self.spacing = (float(sx), float(sy), float(sz))

    @property
    def dims(self):
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def voxel_to_world(self, pts: np.ndarray) -> np.ndarray:
        """Map continuous (x, y, z) voxel-index coordinates to world units."""
        sx, sy, sz = self.spacing
        out = np.asarray(pts, dtype=float).copy()
        out[..., 0] = (out[..., 0] + 0.5) * sx
        out[..., 1] = (out[..., 1] + 0.5) * sy
        out[..., 2] = out[..., 2] * sz
        return out


@dataclass
class TriMesh:
    """Indexed triangle mesh in world units."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.intp).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle indices out of range")

    def is_empty(self):
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.areas().sum())

    def edge_counts(self):
        """Undirected edge -> incident triangle count (for manifold checks)."""
        tri = self.triangles
        edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    def euler_characteristic(self) -> int:
        tri = self.triangles
        edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        v = len(np.unique(tri))
        return v - len(edges) + len(tri)


def render_volume(scene: Scene, nz: int, nx: int, ny: int,
                  z_spacing: float | None = None) -> ScalarVolume:
    """Render a dense volume by sweeping the scene through time.

    Slice ``k`` is the frame at ``t = k/(nz-1)``; pass ``z_spacing`` to give
    the volume physical units (e.g. slice distance / upsampling factor),
    otherwise the z extent is normalized to [0, 1] like x and y.
    """
    if nz < 2:
        raise ValueError("volume needs at least 2 slices")
    values = np.stack([
        render_frame(scene, k / (nz - 1), nx, ny) for k in range(nz)
    ])
    sz = 1.0 / (nz - 1) if z_spacing is None else float(z_spacing)
    return ScalarVolume(values=values, spacing=(1.0 / nx, 1.0 / ny, sz))


def marching_cubes(vol: ScalarVolume, iso: float) -> TriMesh:
    """Extract the isosurface with the classic 256-case lookup tables.

    Vertices are linearly interpolated along crossing edges and welded by
    exact grid-edge identity; triangles are oriented so normals point away
    from the above-iso region.  An empty mesh is a valid result.
    """
    vals = vol.values
    nz, ny, nx = vals.shape
    if min(nx, ny, nz) < 2:
        raise ValueError("volume must span at least 2 samples per axis")

    corner_vals = [
        vals[oz:nz - 1 + oz, oy:ny - 1 + oy, ox:nx - 1 + ox]
        for (ox, oy, oz) in CORNER_OFFSETS
    ]
    cube_idx = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.int32)
    for bit, cv in enumerate(corner_vals):
        cube_idx |= (cv < iso).astype(np.int32) << bit

    active = np.nonzero(EDGE_TABLE[cube_idx] != 0)
    if active[0].size == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))
    kz, ky, kx = (a.astype(np.int64) for a in active)
    a_idx = cube_idx[active]
    edge_bits = EDGE_TABLE[a_idx]

    # one shared vertex per crossing grid edge, keyed by (axis, origin point)
    n_pts = nx * ny * nz
    vid = np.full((kx.size, 12), -1, dtype=np.int64)
    keys_parts, pos_parts, fill = [], [], []
    for e in range(12):
        cells = np.nonzero((edge_bits >> e) & 1)[0]
        if cells.size == 0:
            continue
        c0, c1 = EDGE_CORNERS[e]
        o0 = CORNER_OFFSETS[c0]
        o1 = CORNER_OFFSETS[c1]
        axis = int(np.nonzero(o0 != o1)[0][0])
        base = np.minimum(o0, o1)
        gx = kx[cells] + base[0]
        gy = ky[cells] + base[1]
        gz = kz[cells] + base[2]
        keys_parts.append(axis * n_pts + (gz * ny + gy) * nx + gx)

        v0 = corner_vals[c0][kz[cells], ky[cells], kx[cells]]
        v1 = corner_vals[c1][kz[cells], ky[cells], kx[cells]]
        frac = (iso - v0) / (v1 - v0)
        p0 = np.stack([kx[cells] + o0[0], ky[cells] + o0[1], kz[cells] + o0[2]], 1).astype(float)
        p1 = np.stack([kx[cells] + o1[0], ky[cells] + o1[1], kz[cells] + o1[2]], 1).astype(float)
        pos_parts.append(p0 + frac[:, None] * (p1 - p0))
        fill.append((cells, e))

    keys = np.concatenate(keys_parts)
    positions = np.concatenate(pos_parts)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    vertices = vol.voxel_to_world(positions[first])

    start = 0
    for (cells, e), part in zip(fill, keys_parts):
        vid[cells, e] = inverse[start:start + part.size]
        start += part.size

    tri_rows = TRI_TABLE[a_idx]
    tris = []
    for slot in range(5):
        cols = tri_rows[:, 3 * slot:3 * slot + 3]
        valid = np.nonzero(cols[:, 0] >= 0)[0]
        if valid.size == 0:
            break
        tris.append(np.stack([
            vid[valid, cols[valid, 0]],
            vid[valid, cols[valid, 1]],
            vid[valid, cols[valid, 2]],
        ], axis=1))
    triangles = np.concatenate(tris) if tris else np.zeros((0, 3), dtype=np.int64)

    # drop degenerate triangles (possible when the field hits iso exactly)
    ok = ((triangles[:, 0] != triangles[:, 1])
          & (triangles[:, 1] != triangles[:, 2])
          & (triangles[:, 0] != triangles[:, 2]))
    triangles = triangles[ok]
    # table winding yields normals toward the below-iso side already; flip to
    # keep them pointing away from the filled (above-iso) region explicitly
    return orient_outward(TriMesh(vertices, triangles), vol, iso)


def orient_outward(mesh: TriMesh, vol: ScalarVolume, iso: float) -> TriMesh:
    """Flip triangles whose normal points up the field gradient.

    The field gradient points into the above-iso (interior) region, so an
    outward normal must have a negative component along it.
    """
    if mesh.is_empty():
        return mesh
    grad = np.stack(np.gradient(vol.values), axis=-1)  # d/dz, d/dy, d/dx
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    centroid = (a + b + c) / 3.0
    sx, sy, sz = vol.spacing
    gx = np.clip(centroid[:, 0] / sx - 0.5, 0, vol.values.shape[2] - 1)
    gy = np.clip(centroid[:, 1] / sy - 0.5, 0, vol.values.shape[1] - 1)
    gz = np.clip(centroid[:, 2] / sz, 0, vol.values.shape[0] - 1)
    ix = np.rint(gx).astype(int)
    iy = np.rint(gy).astype(int)
    iz = np.rint(gz).astype(int)
    g = grad[iz, iy, ix][:, ::-1] / np.array([sx, sy, sz])  # to world axes
    normal = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", normal, g) > 0
    tri = mesh.triangles.copy()
    tri[flip] = tri[flip][:, ::-1]
    return TriMesh(mesh.vertices, tri)


def sample_surface(mesh: TriMesh, count: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform point sample of a triangle mesh."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(areas), size=count, p=areas / total)
    r1 = rng.random(count)
    r2 = rng.random(count)
    s = np.sqrt(r1)
    w0 = 1.0 - s
    w1 = s * (1.0 - r2)
    w2 = s * r2
    a = mesh.vertices[mesh.triangles[chosen, 0]]
    b = mesh.vertices[mesh.triangles[chosen, 1]]
    c = mesh.vertices[mesh.triangles[chosen, 2]]
    return w0[:, None] * a + w1[:, None] * b + w2[:, None] * c


def _nn_distances(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point clouds must be non-empty")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return d_ab, d_ba


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbor distance between point clouds."""
    d_ab, d_ba = _nn_distances(a, b)
    return float(0.5 * (d_ab.mean() + d_ba.mean()))


def hausdorff(a, b) -> float:
    """Max of the two directed maximum nearest-neighbor distances."""
    d_ab, d_ba = _nn_distances(a, b)
    return float(max(d_ab.max(), d_ba.max()))


def hd95(a, b) -> float:
    """95th percentile of the pooled bidirectional NN distances."""
    d_ab, d_ba = _nn_distances(a, b)
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


# ---------------------------------------------------------------------------
# Wavefront OBJ (v/f lines only, triangles, 1-based indices)

def write_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_obj(path) -> TriMesh:
    vertices = []
    triangles = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangle faces supported")
                idx = []
                for token in parts[1:]:
                    if not token.lstrip("-").isdigit():
                        raise ValueError(
                            f"{path}:{lineno}: unsupported face token {token!r}"
                        )
                    value = int(token)
                    if value <= 0:
                        raise ValueError(
                            f"{path}:{lineno}: negative or zero face index {value}"
                        )
                    idx.append(value - 1)
                triangles.append(idx)
            else:
                raise ValueError(
                    f"{path}:{lineno}: unsupported OBJ element {parts[0]!r}"
                )
    mesh_vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    tri = np.asarray(triangles, dtype=np.intp).reshape(-1, 3)
    if tri.size and tri.max() >= len(mesh_vertices):
        raise ValueError(f"{path}: face index out of range")
    return TriMesh(mesh_vertices, tri)


# ---------------------------------------------------------------------------
# MVOL1 volume dump: ASCII header then little-endian float32, z-major

def write_volume(vol: ScalarVolume, path) -> None:
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC + b"\n")
        f.write(f"{nx} {ny} {nz}\n".encode())
        f.write(f"{sx:.9g} {sy:.9g} {sz:.9g}\n".encode())
        f.write(np.ascontiguousarray(vol.values, dtype="<f4").tobytes())


def read_volume(path) -> ScalarVolume:
    from .io import DataError

    data = Path(path).read_bytes()
    if not data.startswith(VOLUME_MAGIC + b"\n"):
        raise DataError(f"{path}: bad magic, not an MVOL1 volume")
    try:
        nl1 = data.index(b"\n", len(VOLUME_MAGIC) + 1)
        nl2 = data.index(b"\n", nl1 + 1)
        nx, ny, nz = (int(x) for x in data[len(VOLUME_MAGIC) + 1:nl1].split())
        sx, sy, sz = (float(x) for x in data[nl1 + 1:nl2].split())
    except ValueError as exc:
        raise DataError(f"{path}: malformed MVOL1 header") from exc
    count = nx * ny * nz
    payload = data[nl2 + 1:]
    if len(payload) < 4 * count:
        raise DataError(f"{path}: truncated MVOL1 payload")
    values = np.frombuffer(payload, dtype="<f4", count=count).astype(float)
    return ScalarVolume(values=values.reshape(nz, ny, nx), spacing=(sx, sy, sz))
