"""Folded-Gaussian primitives and the scene container.

A folded Gaussian is a 2D spatial Gaussian whose mean and covariance are
functions of a time coordinate: the mean is shifted by a polynomial motion
term, the covariance is rescaled by an exponentiated polynomial, and the
whole primitive is weighted by a temporal Gaussian window.  Both polynomials
are forced to have zero constant term so that at ``t == temporal_mean`` the
primitive reduces exactly to its stored spatial parameters.

Coordinates are normalized image coordinates: the unit square with x to the
right and y down.  Time lives in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

MODE_INTERPOLATION = "interpolation"
MODE_MESH = "mesh"
MODES = (MODE_INTERPOLATION, MODE_MESH)

# Per-gaussian parameter arrays, in the canonical (serialization) order.
# Shapes are per gaussian: () scalars, (2,) vectors, (2, D)/(Da,) polynomials.
PARAM_FIELDS = (
    "means",
    "temporal_means",
    "log_temporal_spreads",
    "rotations",
    "log_scales",
    "motion_coeffs",
    "scale_coeffs",
    "opacity_logits",
    "colors",
)


def poly_eval(coeffs, u):
    """Evaluate a zero-constant-term polynomial ``sum_j coeffs[j-1] * u**j``.

    Parameters
    ----------
    coeffs : array_like, shape (D,)
        Coefficient ``j`` (1-based power) is ``coeffs[j-1]``; there is no
        constant term, so the polynomial always vanishes at ``u == 0``.
    u : float

    Returns
    -------
    float
    """
    acc = 0.0
    for c in reversed(np.asarray(coeffs, dtype=float)):
        acc = (acc + c) * u
    return float(acc)


def poly_eval_deriv(coeffs, u):
    """Derivative of :func:`poly_eval` with respect to ``u``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size == 0:
        return 0.0
    powers = np.arange(1, coeffs.size + 1)
    return float(np.sum(powers * coeffs * u ** (powers - 1)))


def rotation_matrix(angle):
    """2x2 rotation matrix for ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def cov_from_params(rotation, log_scales):
    """Spatial covariance ``R diag(exp(2*log_scales)) R^T``.

    ``log_scales`` are the logs of the per-axis standard deviations, so the
    eigenvalues of the result are ``exp(2 * log_scales)``.  The output is
    symmetric positive definite for any finite inputs.
    """
    r = rotation_matrix(rotation)
    eig = np.exp(2.0 * np.asarray(log_scales, dtype=float))
    cov = (r * eig) @ r.T
    # exact symmetry regardless of rounding in the two off-diagonal products
    return 0.5 * (cov + cov.T)


@dataclass
class FoldedGaussian:
    """One scene primitive.

    Attributes
    ----------
    mean : (2,) array
        Spatial mean in normalized image coordinates.
    temporal_mean : float
        Center of the temporal window, in [0, 1].
    log_temporal_spread : float
        Log of the temporal standard deviation (kept in log form so the
        optimizer never has to project back to positive values).
    rotation : float
        Orientation of the spatial covariance, radians.
    log_scales : (2,) array
        Logs of the per-axis spatial standard deviations.
    motion_coeffs : (2, D) array
        Motion polynomial, one row per spatial axis; column ``j`` multiplies
        ``u**(j+1)`` with ``u = temporal_mean - t``.  No constant term.
    scale_coeffs : (Da,) array
        Covariance rescaling polynomial; the rescale factor is
        ``exp(poly(u))``, hence positive and exactly 1 at ``u == 0``.
    opacity_logit : float
        Opacity is ``sigmoid(opacity_logit)``.
    color : float
        Grayscale intensity in [0, 1].
    """

    mean: np.ndarray
    temporal_mean: float
    log_temporal_spread: float
    rotation: float
    log_scales: np.ndarray
    motion_coeffs: np.ndarray
    scale_coeffs: np.ndarray
    opacity_logit: float
    color: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(2)
        self.motion_coeffs = np.atleast_2d(np.asarray(self.motion_coeffs, dtype=float))
        if self.motion_coeffs.shape[0] != 2:
            raise ValueError("motion_coeffs must have shape (2, D)")
        self.scale_coeffs = np.asarray(self.scale_coeffs, dtype=float).reshape(-1)

    @property
    def temporal_spread(self):
        return float(np.exp(self.log_temporal_spread))

    @property
    def opacity(self):
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    def spatial_cov(self):
        return cov_from_params(self.rotation, self.log_scales)


@dataclass
class ConditionedGaussian:
    """A folded Gaussian frozen at a query time.

    ``temporal_weight`` is ``exp(-(t - temporal_mean)^2 / (2 sigma_t^2))``,
    always in (0, 1].
    """

    mean: np.ndarray
    cov: np.ndarray
    cov_inverse: np.ndarray
    temporal_weight: float


def condition_at_time(g: FoldedGaussian, t: float) -> ConditionedGaussian:
    """Condition a folded Gaussian on a time coordinate.

    The conditioned mean is ``g.mean + f(u)`` and the conditioned covariance
    ``exp(p_a(u)) * Sigma_s`` with ``u = g.temporal_mean - t``.  At
    ``t == g.temporal_mean`` both reduce to the stored spatial parameters
    and the temporal weight is exactly 1.
    """
    u = g.temporal_mean - t
    shift = np.array(
        [poly_eval(g.motion_coeffs[0], u), poly_eval(g.motion_coeffs[1], u)]
    )
    rescale = float(np.exp(poly_eval(g.scale_coeffs, u)))
    cov = rescale * g.spatial_cov()
    sigma_t = g.temporal_spread
    weight = float(np.exp(-0.5 * ((t - g.temporal_mean) / sigma_t) ** 2))
    return ConditionedGaussian(
        mean=g.mean + shift,
        cov=cov,
        cov_inverse=np.linalg.inv(cov),
        temporal_weight=weight,
    )


def eval_density(cg: ConditionedGaussian, p) -> float:
    """Unnormalized density of a conditioned Gaussian at a point.

    The kernel peaks at exactly 1 on the mean (no normalizing constant), so
    opacity alone controls how much a primitive can contribute to a pixel.
    """
    d = np.asarray(p, dtype=float) - cg.mean
    return float(np.exp(-0.5 * d @ cg.cov_inverse @ d))


@dataclass
class Scene:
    """An ordered collection of folded Gaussians, stored as flat arrays.

    Array-of-structs accessors (`__getitem__`) exist for convenience; the
    renderer and trainer work on the arrays directly.  ``frame_count`` is the
    number of frames the scene was (or will be) trained on; it fixes the
    lower edge ``2/N`` of the admissible temporal-spread band.
    """

    means: np.ndarray
    temporal_means: np.ndarray
    log_temporal_spreads: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    motion_coeffs: np.ndarray
    scale_coeffs: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    frame_count: int = 2
    image_width: int = 1
    image_height: int = 1
    mode: str = MODE_INTERPOLATION

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=float).reshape(n, 2)
        self.temporal_means = np.asarray(self.temporal_means, dtype=float).reshape(n)
        self.log_temporal_spreads = np.asarray(
            self.log_temporal_spreads, dtype=float
        ).reshape(n)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n, 2)
        self.motion_coeffs = np.asarray(self.motion_coeffs, dtype=float)
        if self.motion_coeffs.ndim != 3 or self.motion_coeffs.shape[:2] != (n, 2):
            raise ValueError("motion_coeffs must have shape (n, 2, D)")
        self.scale_coeffs = np.asarray(self.scale_coeffs, dtype=float)
        if self.scale_coeffs.ndim != 2 or self.scale_coeffs.shape[0] != n:
            raise ValueError("scale_coeffs must have shape (n, Da)")
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n)
        self.colors = np.asarray(self.colors, dtype=float).reshape(n)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i) -> FoldedGaussian:
        return FoldedGaussian(
            mean=self.means[i].copy(),
            temporal_mean=float(self.temporal_means[i]),
            log_temporal_spread=float(self.log_temporal_spreads[i]),
            rotation=float(self.rotations[i]),
            log_scales=self.log_scales[i].copy(),
            motion_coeffs=self.motion_coeffs[i].copy(),
            scale_coeffs=self.scale_coeffs[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=float(self.colors[i]),
        )

    @property
    def motion_degree(self):
        return self.motion_coeffs.shape[2]

    @property
    def scale_degree(self):
        return self.scale_coeffs.shape[1]

    @property
    def temporal_spreads(self):
        return np.exp(self.log_temporal_spreads)

    @property
    def opacities(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def param_arrays(self):
        """Parameter arrays in canonical order, as a name -> array dict."""
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "Scene":
        return Scene(
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
            frame_count=self.frame_count,
            image_width=self.image_width,
            image_height=self.image_height,
            mode=self.mode,
        )

    def select(self, index) -> "Scene":
        """New scene keeping the gaussians selected by ``index``."""
        return Scene(
            **{name: getattr(self, name)[index].copy() for name in PARAM_FIELDS},
            frame_count=self.frame_count,
            image_width=self.image_width,
            image_height=self.image_height,
            mode=self.mode,
        )

    def check_finite(self):
        for name in PARAM_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in scene field {name!r}")

    @classmethod
    def empty(cls, motion_degree=7, scale_degree=2, frame_count=2,
              image_width=1, image_height=1, mode=MODE_INTERPOLATION) -> "Scene":
        return cls(
            means=np.zeros((0, 2)),
            temporal_means=np.zeros(0),
            log_temporal_spreads=np.zeros(0),
            rotations=np.zeros(0),
            log_scales=np.zeros((0, 2)),
            motion_coeffs=np.zeros((0, 2, motion_degree)),
            scale_coeffs=np.zeros((0, scale_degree)),
            opacity_logits=np.zeros(0),
            colors=np.zeros(0),
            frame_count=frame_count,
            image_width=image_width,
            image_height=image_height,
            mode=mode,
        )

    @classmethod
    def from_gaussians(cls, gaussians, frame_count=2, image_width=1,
                       image_height=1, mode=MODE_INTERPOLATION) -> "Scene":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(frame_count=frame_count, image_width=image_width,
                             image_height=image_height, mode=mode)
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            temporal_means=np.array([g.temporal_mean for g in gaussians]),
            log_temporal_spreads=np.array(
                [g.log_temporal_spread for g in gaussians]
            ),
            rotations=np.array([g.rotation for g in gaussians]),
            log_scales=np.stack([g.log_scales for g in gaussians]),
            motion_coeffs=np.stack([g.motion_coeffs for g in gaussians]),
            scale_coeffs=np.stack([g.scale_coeffs for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            colors=np.array([g.color for g in gaussians]),
            frame_count=frame_count,
            image_width=image_width,
            image_height=image_height,
            mode=mode,
        )
