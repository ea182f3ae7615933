"""Sensor and clutter models: disc field of view, linear-Gaussian
measurements, Poisson clutter uniform over the sensing disc."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi


def _constant_density(value: float, z) -> float:
    return value


@dataclass(frozen=True)
class ClutterModel:
    """Poisson false-measurement process over the sensing disc.

    ``intensity_per_m2`` is the expected clutter count per unit area per
    scan; the per-scan count is Poisson with mean intensity * area, and
    points fall uniformly on the disc.
    """

    intensity_per_m2: float
    fov_area_m2: float

    def __post_init__(self):
        if self.intensity_per_m2 < 0:
            raise ConfigurationError(
                f"intensity_per_m2 must be nonnegative, got {self.intensity_per_m2}"
            )
        if self.fov_area_m2 <= 0:
            raise ConfigurationError(f"fov_area_m2 must be positive, got {self.fov_area_m2}")

    @classmethod
    def for_disc(cls, intensity_per_m2: float, fov_radius_m: float) -> "ClutterModel":
        return cls(intensity_per_m2, np.pi * fov_radius_m**2)

    @property
    def expected_per_scan(self) -> float:
        return self.intensity_per_m2 * self.fov_area_m2

    @property
    def fov_radius_m(self) -> float:
        return float(np.sqrt(self.fov_area_m2 / np.pi))

    def density_fn(self) -> Callable:
        """Clutter intensity as a function of the measurement, for filter
        updates. Uniform over the disc, so it is the constant
        intensity_per_m2 (the area and the uniform density cancel)."""
        return partial(_constant_density, self.intensity_per_m2)


def clutter_density(z, clutter: ClutterModel, robot_pos) -> float:
    """Clutter intensity at an in-FoV measurement: the constant
    intensity_per_m2. Raises for points outside the disc around
    ``robot_pos``."""
    offset = np.asarray(z, dtype=float) - np.asarray(robot_pos, dtype=float)
    if float(np.hypot(offset[0], offset[1])) > clutter.fov_radius_m:
        raise ConfigurationError(f"measurement {z} lies outside the field of view")
    return clutter.intensity_per_m2


@dataclass(frozen=True)
class SensorModel:
    """Linear-Gaussian position sensor with a disc field of view.

    Detection probability is ``p_d`` anywhere within ``fov_radius_m`` of
    the robot (boundary inclusive) and zero outside. ``clutter_intensity_fn``
    is the clutter intensity evaluated at a measurement, used by the filter
    update; None means clutter-free.
    """

    h: np.ndarray
    r: np.ndarray
    p_d: float
    fov_radius_m: float
    clutter_intensity_fn: Callable | None = None
    noise_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if h.shape != (2, 2) or r.shape != (2, 2):
            raise ConfigurationError("sensor h and r must be 2x2 matrices")
        if np.max(np.abs(r - r.T)) > 1e-12:
            raise ConfigurationError("measurement noise covariance r must be symmetric")
        if not 0.0 <= self.p_d <= 1.0:
            raise ConfigurationError(f"p_d must lie in [0, 1], got {self.p_d}")
        if self.fov_radius_m <= 0:
            raise ConfigurationError(f"fov_radius_m must be positive, got {self.fov_radius_m}")
        try:
            chol = np.linalg.cholesky(r)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("measurement noise covariance r must be positive-definite") from exc
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "noise_chol", chol)

    def kappa(self, z) -> float:
        return float(self.clutter_intensity_fn(z)) if self.clutter_intensity_fn else 0.0


@dataclass(frozen=True)
class Target:
    """Stationary ground-truth target."""

    id: int
    position: np.ndarray


@dataclass(frozen=True)
class MeasurementSet:
    """One robot's scan at one step: an unordered collection of 2-D points."""

    robot_id: int
    step: int
    points: np.ndarray


def target_positions(targets) -> np.ndarray:
    """Accepts a (n, 2) array or a sequence of Target; returns (n, 2)."""
    if isinstance(targets, np.ndarray):
        return targets.reshape(-1, 2)
    return np.array([t.position for t in targets], dtype=float).reshape(-1, 2)


def detection_probability(robot_pos, x, sensor: SensorModel) -> float:
    """p_d inside the FoV disc (boundary inclusive), zero outside."""
    offset = np.asarray(x, dtype=float) - np.asarray(robot_pos, dtype=float)
    dist = float(np.hypot(offset[0], offset[1]))
    return sensor.p_d if dist <= sensor.fov_radius_m else 0.0


def detection_probability_batch(robot_pos, points: np.ndarray, sensor: SensorModel) -> np.ndarray:
    d2 = ((points - robot_pos) ** 2).sum(axis=1)
    return np.where(d2 <= sensor.fov_radius_m**2, sensor.p_d, 0.0)


def generate_measurements(robot_pos, targets, sensor: SensorModel,
                          clutter: ClutterModel | None, rng: np.random.Generator,
                          robot_id: int = 0, step: int = 0,
                          discard_outside_fov: bool = False) -> MeasurementSet:
    """Scan once: every in-FoV target yields z = Hx + noise independently
    with probability p_d, then Poisson clutter lands uniformly on the disc.

    Measurements that leave the disc due to noise are kept by default (the
    likelihood model, not the FoV boundary, governs the filter update);
    pass discard_outside_fov=True to clip them.
    """
    robot_pos = np.asarray(robot_pos, dtype=float)
    pos = target_positions(targets)
    parts = []
    if pos.size:
        d2 = ((pos - robot_pos) ** 2).sum(axis=1)
        in_fov = pos[d2 <= sensor.fov_radius_m**2]
        if len(in_fov):
            detected = in_fov[rng.random(len(in_fov)) < sensor.p_d]
            if len(detected):
                noise = rng.standard_normal(detected.shape) @ sensor.noise_chol.T
                parts.append(detected @ sensor.h.T + noise)
    if clutter is not None and clutter.expected_per_scan > 0:
        n_clutter = rng.poisson(clutter.expected_per_scan)
        if n_clutter:
            u = rng.random((n_clutter, 2))
            radius = sensor.fov_radius_m * np.sqrt(u[:, 0])
            angle = TWO_PI * u[:, 1]
            parts.append(robot_pos + np.column_stack([radius * np.cos(angle),
                                                      radius * np.sin(angle)]))
    points = np.vstack(parts) if parts else np.empty((0, 2))
    if discard_outside_fov and len(points):
        d2 = ((points - robot_pos) ** 2).sum(axis=1)
        points = points[d2 <= sensor.fov_radius_m**2]
    return MeasurementSet(robot_id=robot_id, step=step, points=points)
