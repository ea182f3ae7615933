"""Structural identities of the intensity recursion: mass bookkeeping,
covariance contraction, and collapse to a single-target Bayes filter."""

import numpy as np
import pytest

from swarmtrack.gmphd import (
    BirthModel,
    GaussianMixture,
    MotionModel,
    PruneMergeConfig,
    SpawnModel,
    estimate_count,
    predict,
    prune_merge,
    update,
)
from swarmtrack.sensing import SensorModel

I2 = np.eye(2)


def kalman_filter_step(x, p, z, f, q, h, r):
    """Textbook linear-Gaussian Bayes filter, kept independent of the
    library implementation (numpy solve, no shared helpers)."""
    x_pred = f @ x
    p_pred = f @ p @ f.T + q
    s = h @ p_pred @ h.T + r
    k = p_pred @ h.T @ np.linalg.solve(s, I2).T
    x_post = x_pred + k @ (z - h @ x_pred)
    p_post = (I2 - k @ h) @ p_pred
    return x_post, p_post


def random_mixture(rng, j=None):
    j = int(rng.integers(1, 8)) if j is None else j
    covs = []
    for _ in range(j):
        a = rng.normal(size=(2, 2))
        covs.append(a @ a.T + 0.3 * I2)
    return GaussianMixture(rng.random(j) * 2, rng.normal(scale=3.0, size=(j, 2)), covs)


def test_reduces_to_kalman_filter_when_single_target_certain():
    # survival 1, detection 1, no clutter, no birth: the recursion must
    # track a lone target exactly like a standard Bayes filter
    rng = np.random.default_rng(2718)
    f = np.array([[1.0, 0.04], [-0.03, 0.98]])
    q = 0.2 * I2
    h = np.array([[1.0, 0.1], [0.0, 0.9]])
    r = 0.25 * I2
    motion = MotionModel(f=f, q=q, survival_probability=1.0)
    sensor = SensorModel(h=h, r=r, p_d=1.0, fov_radius_m=1e12)
    no_birth = BirthModel(weights=[], bearings_rad=[], covariances=np.empty((0, 2, 2)),
                          radius_fraction=0.8, fov_radius_m=1e12)
    cfg = PruneMergeConfig(1e-12, 4.0, 10)

    x, p = np.array([0.5, -0.2]), 1.5 * I2
    gm = GaussianMixture([1.0], [x], [p])
    for _ in range(100):
        z = rng.normal(scale=2.0, size=2)
        gm = predict(gm, motion, no_birth, None, np.zeros(2))
        gm = update(gm, [z], sensor, np.zeros(2))
        gm = prune_merge(gm, cfg)
        x, p = kalman_filter_step(x, p, z, f, q, h, r)
        assert gm.j_count == 1
        assert gm.weights[0] == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(gm.means[0] - x)) < 1e-9
        assert np.max(np.abs(gm.covariances[0] - p)) < 1e-9


def test_predict_mass_identity_randomized():
    rng = np.random.default_rng(11)
    birth = BirthModel(weights=rng.random(4), bearings_rad=rng.random(4) * 2 * np.pi,
                       covariances=0.5 * I2, radius_fraction=0.8, fov_radius_m=0.6)
    spawn = SpawnModel(weights=[0.07, 0.02], f=[I2, 0.3 * I2], d=[[0, 0], [1, -1]],
                       q=[0.1 * I2, 0.3 * I2], enabled=True)
    for _ in range(200):
        gm = random_mixture(rng)
        ps = float(rng.random())
        motion = MotionModel(f=I2, q=0.2 * I2, survival_probability=ps)
        out = predict(gm, motion, birth, spawn, rng.normal(size=2))
        expected = ps * gm.total_mass() + birth.total_mass() \
            + spawn.total_mass() * gm.total_mass()
        assert out.total_mass() == pytest.approx(expected, abs=1e-9)


def test_update_detection_mass_sums_to_one_without_clutter():
    rng = np.random.default_rng(23)
    sensor = SensorModel(h=I2, r=0.25 * I2, p_d=0.8, fov_radius_m=1e9)
    for _ in range(200):
        gm = random_mixture(rng)
        z = rng.normal(scale=2.0, size=(1, 2))
        out = update(gm, z, sensor, np.zeros(2))
        detection_mass = out.total_mass() - (1 - 0.8) * gm.total_mass()
        assert detection_mass == pytest.approx(1.0, abs=1e-9)


def test_update_detection_mass_below_one_with_clutter():
    rng = np.random.default_rng(29)
    sensor = SensorModel(h=I2, r=0.25 * I2, p_d=0.8, fov_radius_m=1e9,
                         clutter_intensity_fn=lambda z: 3.98e-3)
    for _ in range(50):
        gm = random_mixture(rng)
        z = gm.means[0:1] + rng.normal(scale=0.2, size=(1, 2))
        out = update(gm, z, sensor, np.zeros(2))
        detection_mass = out.total_mass() - (1 - 0.8) * gm.total_mass()
        assert detection_mass < 1.0


def test_update_covariance_contraction():
    rng = np.random.default_rng(31)
    sensor = SensorModel(h=I2, r=0.25 * I2, p_d=1.0, fov_radius_m=1e9)
    for _ in range(100):
        gm = random_mixture(rng, j=1)
        out = update(gm, rng.normal(size=(1, 2)), sensor, np.zeros(2))
        gap = gm.covariances[0] - out.covariances[0]
        assert np.min(np.linalg.eigvalsh(gap)) > -1e-12


def test_prune_merge_never_increases_mass_or_count():
    rng = np.random.default_rng(37)
    cfg = PruneMergeConfig(1e-3, 4.0, 5)
    for _ in range(100):
        gm = random_mixture(rng)
        out = prune_merge(gm, cfg)
        assert out.total_mass() <= gm.total_mass() + 1e-12
        assert out.j_count <= gm.j_count


def test_count_exact_for_unit_weight_components():
    rng = np.random.default_rng(41)
    for n in range(1, 6):
        gm = GaussianMixture(np.ones(n), rng.normal(scale=5, size=(n, 2)),
                             np.repeat(I2[None], n, axis=0))
        assert estimate_count(gm) == n
