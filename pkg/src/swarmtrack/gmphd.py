"""Gaussian-mixture intensity filter for planar multi-target tracking.

The filter carries the first moment (intensity) of the target random set
as a weighted Gaussian mixture. With linear-Gaussian motion/measurement
models, state-independent survival probability, a disc detection profile,
and Gaussian-mixture birth/spawn intensities, prediction and update stay
in closed form. The integral of the intensity estimates the target count;
local maxima above a weight threshold are reported as target states.

All state is 2-D (planar positions), so the linear algebra uses explicit
2x2 closed forms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .sensing import SensorModel, detection_probability_batch

TWO_PI = 2.0 * np.pi
DET_UNDERFLOW = 1e-300
SYMMETRY_TOL = 1e-12


def _det2(p: np.ndarray) -> np.ndarray:
    return p[..., 0, 0] * p[..., 1, 1] - p[..., 0, 1] * p[..., 1, 0]


def _inv2(p: np.ndarray, det: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    out[..., 0, 0] = p[..., 1, 1]
    out[..., 1, 1] = p[..., 0, 0]
    out[..., 0, 1] = -p[..., 0, 1]
    out[..., 1, 0] = -p[..., 1, 0]
    return out / det[..., None, None]


def _is_pd2(p: np.ndarray) -> np.ndarray:
    """Positive-definiteness of symmetric 2x2 stacks: positive diagonal
    and positive determinant."""
    return (p[..., 0, 0] > 0) & (_det2(p) > 0)


def _quadform2(inv: np.ndarray, d: np.ndarray) -> np.ndarray:
    """d^T inv d for stacked 2x2 matrices and 2-vectors."""
    return (inv[..., 0, 0] * d[..., 0] ** 2
            + 2.0 * inv[..., 0, 1] * d[..., 0] * d[..., 1]
            + inv[..., 1, 1] * d[..., 1] ** 2)


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian: nonnegative weight, 2-D mean (m), 2x2
    symmetric positive-definite covariance (m^2)."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ConfigurationError(f"component weight must be nonnegative, got {self.weight}")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
            raise ConfigurationError("component covariance must be symmetric")
        if not _is_pd2(cov):
            raise NumericError("component covariance must be positive-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


class GaussianMixture:
    """Ordered collection of weighted Gaussian components, stored as
    stacked arrays: weights (J,), means (J, 2), covariances (J, 2, 2)."""

    __slots__ = ("weights", "means", "covariances")

    def __init__(self, weights, means, covariances, validate: bool = True):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        j = len(self.weights)
        self.means = np.asarray(means, dtype=float).reshape(j, 2)
        self.covariances = np.asarray(covariances, dtype=float).reshape(j, 2, 2)
        if validate and j:
            if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
                raise ConfigurationError("mixture weights must be finite and nonnegative")
            sym = np.max(np.abs(self.covariances - self.covariances.transpose(0, 2, 1)))
            if sym > SYMMETRY_TOL:
                raise ConfigurationError("mixture covariances must be symmetric")
            if not np.all(_is_pd2(self.covariances)):
                raise NumericError("mixture covariances must be positive-definite")

    @classmethod
    def empty(cls) -> "GaussianMixture":
        return cls(np.empty(0), np.empty((0, 2)), np.empty((0, 2, 2)), validate=False)

    @classmethod
    def from_components(cls, components) -> "GaussianMixture":
        components = list(components)
        if not components:
            return cls.empty()
        return cls(
            [c.weight for c in components],
            [c.mean for c in components],
            [c.covariance for c in components],
            validate=False,
        )

    @property
    def j_count(self) -> int:
        return len(self.weights)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> tuple[GaussianComponent, ...]:
        return tuple(
            GaussianComponent(float(w), m.copy(), p.copy())
            for w, m, p in zip(self.weights, self.means, self.covariances)
        )

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __repr__(self):
        return f"GaussianMixture(J={self.j_count}, mass={self.total_mass():.4g})"


@dataclass(frozen=True)
class MotionModel:
    """Linear-Gaussian per-target motion with constant survival probability."""

    f: np.ndarray
    q: np.ndarray
    survival_probability: float

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(2, 2)
        q = np.asarray(self.q, dtype=float).reshape(2, 2)
        if np.max(np.abs(q - q.T)) > SYMMETRY_TOL:
            raise ConfigurationError("process noise covariance q must be symmetric")
        if _det2(q) < 0 or q[0, 0] < 0 or q[1, 1] < 0:
            raise ConfigurationError("process noise covariance q must be positive semidefinite")
        if not 0.0 <= self.survival_probability <= 1.0:
            raise ConfigurationError(
                f"survival_probability must lie in [0, 1], got {self.survival_probability}"
            )
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class BirthModel:
    """Where new targets may appear: a ring of Gaussian components around
    the current robot position, at bearing angles ``bearings_rad`` and
    radius ``radius_fraction * fov_radius_m`` (just inside the FoV rim)."""

    weights: np.ndarray
    bearings_rad: np.ndarray
    covariances: np.ndarray
    radius_fraction: float
    fov_radius_m: float
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        b = np.asarray(self.bearings_rad, dtype=float).reshape(-1)
        if len(w) != len(b):
            raise ConfigurationError("birth weights and bearings must have equal length")
        if np.any(w < 0):
            raise ConfigurationError("birth weights must be nonnegative")
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 2:
            covs = np.repeat(covs[None], len(w), axis=0)
        covs = covs.reshape(len(w), 2, 2)
        r = self.radius_fraction * self.fov_radius_m
        offsets = np.column_stack([r * np.cos(b), r * np.sin(b)])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bearings_rad", b)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "offsets", offsets)

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def radius_m(self) -> float:
        return self.radius_fraction * self.fov_radius_m

    def means_at(self, robot_pos) -> np.ndarray:
        return np.asarray(robot_pos, dtype=float) + self.offsets

    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class SpawnModel:
    """Targets spawned from existing ones via per-component affine-Gaussian
    kernels. Disabled by default; a disabled model adds nothing to the
    prediction."""

    weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    f: np.ndarray = field(default_factory=lambda: np.empty((0, 2, 2)))
    d: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    q: np.ndarray = field(default_factory=lambda: np.empty((0, 2, 2)))
    enabled: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        j = len(w)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float).reshape(j, 2, 2))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).reshape(j, 2))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(j, 2, 2))
        if self.enabled and j == 0:
            raise ConfigurationError("enabled spawn model must have at least one component")

    @property
    def count(self) -> int:
        return len(self.weights)

    def total_mass(self) -> float:
        return float(self.weights.sum()) if self.enabled else 0.0


@dataclass(frozen=True)
class PruneMergeConfig:
    """Mixture-reduction parameters: drop weights below truncation_threshold,
    merge components within merge_threshold (squared Mahalanobis distance),
    keep at most max_components."""

    truncation_threshold: float
    merge_threshold: float
    max_components: int

    def __post_init__(self):
        if self.truncation_threshold < 0:
            raise ConfigurationError("truncation_threshold must be nonnegative")
        if self.merge_threshold < 0:
            raise ConfigurationError("merge_threshold must be nonnegative")
        if self.max_components < 1:
            raise ConfigurationError("max_components must be at least 1")


def predict(prior: GaussianMixture, motion: MotionModel, birth: BirthModel,
            spawn: SpawnModel | None, robot_pos) -> GaussianMixture:
    """One prediction step: thinned-and-displaced survivors, spawned
    components (if enabled), and fresh birth components ringed around the
    robot's current position.

    Output component count is J*(1 + J_spawn) + J_birth. Raises
    NumericError if any resulting covariance fails positive-definiteness.
    """
    j = prior.j_count
    f, q = motion.f, motion.q
    w_parts = [motion.survival_probability * prior.weights]
    m_parts = [prior.means @ f.T]
    p_parts = [f @ prior.covariances @ f.T + q]

    if spawn is not None and spawn.enabled and j:
        w_parts.append(np.outer(prior.weights, spawn.weights).reshape(-1))
        disp = np.einsum("lab,ib->ila", spawn.f, prior.means) + spawn.d[None]
        m_parts.append(disp.reshape(-1, 2))
        covs = np.einsum("lab,ibc,ldc->ilad", spawn.f, prior.covariances, spawn.f) + spawn.q[None]
        p_parts.append(covs.reshape(-1, 2, 2))

    w_parts.append(birth.weights)
    m_parts.append(birth.means_at(robot_pos))
    p_parts.append(birth.covariances)

    out = GaussianMixture(
        np.concatenate(w_parts),
        np.concatenate(m_parts),
        np.concatenate(p_parts),
        validate=False,
    )
    if out.j_count and not np.all(_is_pd2(out.covariances)):
        raise NumericError("prediction produced a non-positive-definite covariance")
    return out


def update(predicted: GaussianMixture, measurements, sensor: SensorModel,
           robot_pos) -> GaussianMixture:
    """One measurement update.

    Every component is copied scaled by its miss probability 1 - p_d(mean);
    every measurement adds detection components with likelihood-normalized
    weights (clutter intensity in the denominator), Kalman-corrected means,
    and gain-contracted covariances. Components whose weight comes out
    exactly zero are dropped.
    """
    j = predicted.j_count
    if j == 0:
        return GaussianMixture.empty()
    measurements = np.asarray(measurements, dtype=float).reshape(-1, 2)
    pd_vec = detection_probability_batch(np.asarray(robot_pos, dtype=float),
                                         predicted.means, sensor)

    w_missed = (1.0 - pd_vec) * predicted.weights
    keep = w_missed > 0
    if not len(measurements):
        return GaussianMixture(w_missed[keep], predicted.means[keep],
                               predicted.covariances[keep], validate=False)

    w_parts = [w_missed[keep]]
    m_parts = [predicted.means[keep]]
    p_parts = [predicted.covariances[keep]]

    h, r = sensor.h, sensor.r
    s = h @ predicted.covariances @ h.T + r
    det_s = _det2(s)
    if not np.all(np.isfinite(det_s)) or np.any(det_s <= 0):
        raise NumericError("singular innovation covariance in update")
    s_inv = _inv2(s, det_s)
    gain = predicted.covariances @ h.T @ s_inv
    p_upd = (np.eye(2) - gain @ h) @ predicted.covariances
    eta = predicted.means @ h.T
    peak = np.where(det_s < DET_UNDERFLOW, 0.0, 1.0 / (TWO_PI * np.sqrt(det_s)))
    base = pd_vec * predicted.weights * peak
    for z in measurements:
        diff = z - eta
        dens = base * np.exp(-0.5 * _quadform2(s_inv, diff))
        denom = sensor.kappa(z) + dens.sum()
        w_det = dens / denom if denom > 0 else np.zeros_like(dens)
        keep = w_det > 0
        if keep.any():
            w_parts.append(w_det[keep])
            m_parts.append(predicted.means[keep] + (gain[keep] @ diff[keep, :, None])[..., 0])
            p_parts.append(p_upd[keep])

    return GaussianMixture(
        np.concatenate(w_parts),
        np.concatenate(m_parts),
        np.concatenate(p_parts),
        validate=False,
    )


def prune_merge(mixture: GaussianMixture, cfg: PruneMergeConfig) -> GaussianMixture:
    """Reduce a mixture: truncate weights below the threshold, then greedily
    cluster around the heaviest remaining component (squared Mahalanobis
    distance measured in that component's covariance) and moment-match each
    cluster; finally cap the component count, keeping the largest weights.
    Merging preserves the post-truncation mass exactly.
    """
    keep = mixture.weights >= cfg.truncation_threshold
    w = mixture.weights[keep]
    m = mixture.means[keep]
    p = mixture.covariances[keep]
    if not len(w):
        return GaussianMixture.empty()

    det_all = _det2(p)
    if np.any(det_all <= 0):
        raise NumericError("non-positive-definite covariance during merge")
    inv_all = _inv2(p, det_all)
    active = np.ones(len(w), dtype=bool)
    out_w, out_m, out_p = [], [], []
    while True:
        idx = np.nonzero(active)[0]
        if not len(idx):
            break
        seed = idx[np.argmax(w[idx])]
        diff = m[idx] - m[seed]
        cluster = idx[_quadform2(inv_all[seed], diff) <= cfg.merge_threshold]
        cw = w[cluster]
        total = cw.sum()
        mean = (cw @ m[cluster]) / total
        spread = m[cluster] - mean
        cov = (cw[:, None, None] * (p[cluster] + spread[:, :, None] * spread[:, None, :])).sum(0) / total
        out_w.append(total)
        out_m.append(mean)
        out_p.append(cov)
        active[cluster] = False

    w = np.array(out_w)
    m = np.array(out_m)
    p = np.array(out_p)
    if len(w) > cfg.max_components:
        order = np.argsort(-w, kind="stable")[: cfg.max_components]
        w, m, p = w[order], m[order], p[order]
    return GaussianMixture(w, m, p, validate=False)


def extract_states(mixture: GaussianMixture, thresh: float = 0.5):
    """Report one (mean, weight, covariance) per component with weight
    strictly above ``thresh``, heaviest first."""
    if not mixture.j_count or mixture.weights.max() <= thresh:
        return []
    idx = np.nonzero(mixture.weights > thresh)[0]
    order = idx[np.argsort(-mixture.weights[idx], kind="stable")]
    return [
        (mixture.means[i].copy(), float(mixture.weights[i]), mixture.covariances[i].copy())
        for i in order
    ]


def estimate_count(mixture: GaussianMixture) -> int:
    """Estimated number of targets: ceiling of the total mixture mass.

    A 1e-9 slack guards exact integer masses against floating-point dust.
    """
    total = mixture.total_mass()
    return max(0, math.ceil(total - 1e-9))


def intensity_at(mixture: GaussianMixture, x) -> float:
    """Mixture intensity at a point; its integral over a region is the
    expected number of targets there."""
    return float(intensity_many(mixture, np.asarray(x, dtype=float).reshape(1, 2))[0])


def intensity_many(mixture: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Intensity at many points, (n, 2) -> (n,)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if mixture.j_count == 0:
        return np.zeros(len(points))
    det = _det2(mixture.covariances)
    if np.any(det <= 0):
        raise NumericError("mixture covariance is not positive-definite")
    inv = _inv2(mixture.covariances, det)
    peak = np.where(det < DET_UNDERFLOW, 0.0, mixture.weights / (TWO_PI * np.sqrt(det)))
    diff = points[:, None, :] - mixture.means[None, :, :]
    quad = _quadform2(inv[None], diff)
    return (peak[None, :] * np.exp(-0.5 * quad)).sum(axis=1)


def intensity_grid_rows(mixture: GaussianMixture, xs: np.ndarray, ys: np.ndarray):
    """(x, y, intensity) rows over a lattice, for surface dumps."""
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    values = intensity_many(mixture, points)
    for (x, y), v in zip(points, values):
        yield float(x), float(y), float(v)
