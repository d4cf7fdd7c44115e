"""Control-point representation and declarative scene edits.

A conditioned 2D gaussian is fully described by three points: its center
and the two tips ``center + sqrt(eigenvalue) * eigenvector``.  Moving those
points re-parameterizes the gaussian, which is how geometric edits are
expressed.  Scene-level edits act on the folded (time-independent)
parameters, gated by temporal and spatial predicates, so the edited scene
remains a valid interpolating model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Scene

_DEGENERATE_TOL = 1e-12


def _sign_fixed_descending_eigh(cov):
    """Batched eigendecomposition, eigenvalues descending, deterministic signs.

    Ties keep eigh's native order (stable sort), so an identity covariance
    yields the identity basis.  Each eigenvector's first nonzero component
    is made positive, resolving the +/- ambiguity the same way every call.
    """
    vals, vecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    first = vecs[..., 0, :]
    second = vecs[..., 1, :]
    sign = np.where(first != 0.0, np.sign(first), np.sign(second))
    sign = np.where(sign == 0.0, 1.0, sign)
    return vals, vecs * sign[..., None, :]


@dataclass
class ControlTriangle:
    """Center plus the two eigenvalue-scaled eigenvector endpoints."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float).reshape(2)
        self.p1 = np.asarray(self.p1, dtype=float).reshape(2)
        self.p2 = np.asarray(self.p2, dtype=float).reshape(2)


def control_points(mean, cov) -> ControlTriangle:
    """Control triangle of a gaussian: ``p_i = mean + sqrt(l_i) v_i``.

    Eigenvalues are ordered ``l_1 >= l_2`` and each eigenvector's first
    nonzero component is positive, so the output is unique.
    """
    cov = np.asarray(cov, dtype=float).reshape(2, 2)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    vals, vecs = _sign_fixed_descending_eigh(cov)
    if vals[-1] <= 0:
        raise ValueError("covariance must be positive definite")
    mean = np.asarray(mean, dtype=float).reshape(2)
    return ControlTriangle(
        p0=mean,
        p1=mean + np.sqrt(vals[0]) * vecs[:, 0],
        p2=mean + np.sqrt(vals[1]) * vecs[:, 1],
    )


def gaussian_from_control_points(tri: ControlTriangle):
    """Invert :func:`control_points`: ``mean = p0``, ``cov = A A^T``.

    ``A`` stacks the two edge vectors as columns; the product is SPD for
    any non-degenerate triangle, including sheared (non-orthogonal) edits.
    """
    a = np.column_stack([tri.p1 - tri.p0, tri.p2 - tri.p0])
    if abs(np.linalg.det(a)) < _DEGENERATE_TOL:
        raise ValueError("degenerate control triangle (collinear points)")
    return tri.p0.copy(), a @ a.T


@dataclass
class EditRule:
    """One rewrite step: predicates plus an affine map about a pivot."""

    t_range: tuple = (0.0, 1.0)
    box: tuple = (-np.inf, -np.inf, np.inf, np.inf)  # x0, y0, x1, y1
    pivot: tuple = (0.5, 0.5)
    linear: np.ndarray = None
    translation: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.linear is None:
            self.linear = np.eye(2)
        self.linear = np.asarray(self.linear, dtype=float).reshape(2, 2)
        if abs(np.linalg.det(self.linear)) < _DEGENERATE_TOL:
            raise ValueError("edit linear map is singular")
        a, b = self.t_range
        if a > b:
            raise ValueError(f"empty-inverted temporal range {self.t_range}")
        x0, y0, x1, y1 = self.box
        if x0 > x1 or y0 > y1:
            raise ValueError(f"malformed box {self.box}")


@dataclass
class EditSpec:
    """Ordered list of rules, applied sequentially."""

    rules: list

    @classmethod
    def parse(cls, text: str) -> "EditSpec":
        rules = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            kwargs = {}
            for token in stripped.split():
                if "=" not in token:
                    raise ValueError(f"edit spec line {lineno}: bad token {token!r}")
                key, value = token.split("=", 1)
                try:
                    if key == "trange":
                        a, b = (float(v) for v in value.split(":"))
                        kwargs["t_range"] = (a, b)
                    elif key == "box":
                        kwargs["box"] = tuple(float(v) for v in value.split(":"))
                    elif key == "pivot":
                        kwargs["pivot"] = tuple(float(v) for v in value.split(":"))
                    elif key == "M":
                        m = [float(v) for v in value.split(",")]
                        kwargs["linear"] = np.array(m).reshape(2, 2)
                    elif key == "t":
                        kwargs["translation"] = tuple(float(v) for v in value.split(","))
                    else:
                        raise ValueError(f"unknown key {key!r}")
                except ValueError as exc:
                    raise ValueError(f"edit spec line {lineno}: {exc}") from exc
            rules.append(EditRule(**kwargs))
        return cls(rules=rules)

    @classmethod
    def load(cls, path) -> "EditSpec":
        return cls.parse(Path(path).read_text())


def apply_edits(scene: Scene, spec: EditSpec) -> Scene:
    """Apply every rule, in order, to the gaussians its predicates match.

    Matched gaussians get their mean mapped through the rule's affine map
    (about its pivot), their spatial covariance conjugated by the linear
    part, and their motion polynomials rotated/scaled as direction vectors.
    Temporal parameters, opacity and color are untouched.
    """
    out = scene.copy()
    for rule in spec.rules:
        t0, t1 = rule.t_range
        x0, y0, x1, y1 = rule.box
        mask = (
            (out.temporal_means >= t0) & (out.temporal_means <= t1)
            & (out.means[:, 0] >= x0) & (out.means[:, 0] <= x1)
            & (out.means[:, 1] >= y0) & (out.means[:, 1] <= y1)
        )
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            continue
        m = rule.linear
        pivot = np.asarray(rule.pivot, dtype=float)
        shift = np.asarray(rule.translation, dtype=float)
        is_identity = np.array_equal(m, np.eye(2))

        if not (is_identity and not shift.any()):
            out.means[idx] = (out.means[idx] - pivot) @ m.T + pivot + shift
        if is_identity:
            continue  # pure translation: shape and motion are untouched
        c = np.cos(out.rotations[idx])
        s = np.sin(out.rotations[idx])
        e1 = np.exp(2.0 * out.log_scales[idx, 0])
        e2 = np.exp(2.0 * out.log_scales[idx, 1])
        # covariance R diag R^T built batched, then conjugated by the map
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        cov = rot @ (np.stack([e1, e2], -1)[..., None] * rot.swapaxes(-1, -2))
        cov = m @ cov @ m.T
        vals, vecs = _sign_fixed_descending_eigh(0.5 * (cov + cov.swapaxes(-1, -2)))
        out.rotations[idx] = np.arctan2(vecs[:, 1, 0], vecs[:, 0, 0])
        out.log_scales[idx] = 0.5 * np.log(vals)

        out.motion_coeffs[idx] = np.einsum("ab,nbd->nad", m, out.motion_coeffs[idx])
    return out
