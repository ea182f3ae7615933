import numpy as np
import pytest

from swarmtrack.errors import ConfigurationError, NumericError
from swarmtrack.gmphd import (
    BirthModel,
    GaussianComponent,
    GaussianMixture,
    MotionModel,
    PruneMergeConfig,
    SpawnModel,
    estimate_count,
    extract_states,
    intensity_at,
    intensity_many,
    predict,
    prune_merge,
    update,
)
from swarmtrack.sensing import SensorModel

I2 = np.eye(2)
PAPER_BEARINGS = np.array([np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4])


@pytest.fixture
def paper_birth():
    return BirthModel(weights=[0.1] * 4, bearings_rad=PAPER_BEARINGS,
                      covariances=0.5 * I2, radius_fraction=0.8, fov_radius_m=0.6)


@pytest.fixture
def no_birth():
    return BirthModel(weights=[], bearings_rad=[], covariances=np.empty((0, 2, 2)),
                      radius_fraction=0.8, fov_radius_m=0.6)


@pytest.fixture
def paper_motion():
    return MotionModel(f=I2, q=0.2 * I2, survival_probability=0.1)


def mixture(*comps):
    return GaussianMixture.from_components(
        GaussianComponent(w, np.array(m, dtype=float), np.array(p, dtype=float))
        for w, m, p in comps
    )


class TestTypes:
    def test_component_validation(self):
        with pytest.raises(ConfigurationError):
            GaussianComponent(-0.1, np.zeros(2), I2)
        with pytest.raises(ConfigurationError):
            GaussianComponent(0.1, np.zeros(2), np.array([[1.0, 0.5], [0.2, 1.0]]))
        with pytest.raises(NumericError):
            GaussianComponent(0.1, np.zeros(2), -I2)

    def test_mixture_roundtrip(self):
        gm = mixture((0.4, (1, 2), I2), (0.6, (3, 4), 2 * I2))
        assert gm.j_count == 2
        assert gm.total_mass() == pytest.approx(1.0)
        comps = gm.components
        assert comps[0].weight == 0.4
        assert comps[1].mean == pytest.approx([3, 4])

    def test_mixture_validation(self):
        with pytest.raises(NumericError):
            GaussianMixture([1.0], [[0, 0]], [np.zeros((2, 2))])

    def test_empty_mixture(self):
        gm = GaussianMixture.empty()
        assert gm.j_count == 0 and gm.total_mass() == 0.0

    def test_prune_config_validation(self):
        with pytest.raises(ConfigurationError):
            PruneMergeConfig(-1e-3, 4.0, 100)
        with pytest.raises(ConfigurationError):
            PruneMergeConfig(1e-3, 4.0, 0)


class TestPredict:
    def test_empty_prior_yields_birth_ring(self, paper_birth, paper_motion):
        robot = np.array([2.0, 3.0])
        out = predict(GaussianMixture.empty(), paper_motion, paper_birth, None, robot)
        assert out.j_count == 4
        assert out.total_mass() == pytest.approx(0.4, abs=1e-12)
        expected = robot + 0.48 * np.column_stack(
            [np.cos(PAPER_BEARINGS), np.sin(PAPER_BEARINGS)]
        )
        assert out.means == pytest.approx(expected)
        assert np.allclose(out.covariances, 0.5 * I2)

    def test_identity_motion_single_component(self, paper_motion, no_birth):
        prior = mixture((1.0, (2, 2), I2))
        out = predict(prior, paper_motion, no_birth, None, np.zeros(2))
        assert out.j_count == 1
        assert out.weights[0] == pytest.approx(0.1)
        assert out.means[0] == pytest.approx([2, 2])
        assert out.covariances[0] == pytest.approx(1.2 * I2)

    def test_component_count_with_birth(self, paper_birth, paper_motion):
        prior = mixture((0.5, (1, 1), I2), (0.5, (2, 2), I2))
        out = predict(prior, paper_motion, paper_birth, None, np.zeros(2))
        assert out.j_count == 2 + 4

    def test_general_motion_matrix(self, no_birth):
        f = np.array([[0.9, 0.1], [-0.2, 1.1]])
        q = np.array([[0.3, 0.05], [0.05, 0.4]])
        motion = MotionModel(f=f, q=q, survival_probability=0.7)
        p0 = np.array([[2.0, 0.3], [0.3, 1.5]])
        prior = mixture((0.8, (1, -1), p0))
        out = predict(prior, motion, no_birth, None, np.zeros(2))
        assert out.weights[0] == pytest.approx(0.56)
        assert out.means[0] == pytest.approx(f @ np.array([1, -1]))
        assert out.covariances[0] == pytest.approx(f @ p0 @ f.T + q)

    def test_spawn_components(self, paper_motion, no_birth):
        spawn = SpawnModel(weights=[0.05], f=[0.5 * I2], d=[[1.0, 0.0]],
                           q=[0.1 * I2], enabled=True)
        prior = mixture((0.4, (2, 2), I2), (0.6, (0, 0), 2 * I2))
        out = predict(prior, paper_motion, no_birth, spawn, np.zeros(2))
        assert out.j_count == 2 * (1 + 1)
        # spawn of the first component
        assert out.weights[2] == pytest.approx(0.4 * 0.05)
        assert out.means[2] == pytest.approx([2.0, 1.0])
        assert out.covariances[2] == pytest.approx(0.1 * I2 + 0.25 * I2)

    def test_disabled_spawn_adds_nothing(self, paper_motion, no_birth):
        prior = mixture((0.4, (2, 2), I2))
        out = predict(prior, paper_motion, no_birth, SpawnModel(), np.zeros(2))
        assert out.j_count == 1

    def test_mass_balance(self, paper_birth, paper_motion):
        rng = np.random.default_rng(0)
        spawn = SpawnModel(weights=[0.05, 0.02], f=[I2, 0.5 * I2],
                           d=[[0, 0], [1, 1]], q=[0.1 * I2, 0.2 * I2], enabled=True)
        for _ in range(20):
            j = rng.integers(1, 6)
            gm = GaussianMixture(rng.random(j), rng.normal(size=(j, 2)),
                                 np.repeat(I2[None], j, axis=0))
            out = predict(gm, paper_motion, paper_birth, spawn, rng.normal(size=2))
            expected = (0.1 * gm.total_mass() + 0.4
                        + gm.total_mass() * spawn.total_mass())
            assert out.total_mass() == pytest.approx(expected, abs=1e-12)

    def test_non_pd_result_surfaces(self, no_birth):
        motion = MotionModel(f=np.zeros((2, 2)), q=np.zeros((2, 2)),
                             survival_probability=1.0)
        prior = mixture((1.0, (0, 0), I2))
        with pytest.raises(NumericError):
            predict(prior, motion, no_birth, None, np.zeros(2))


def wide_sensor(p_d=0.8, kappa=None, r_scale=0.25):
    return SensorModel(h=I2, r=r_scale * I2, p_d=p_d, fov_radius_m=1e9,
                       clutter_intensity_fn=kappa)


class TestUpdate:
    def test_no_measurements_scales_by_miss_probability(self):
        sensor = SensorModel(h=I2, r=0.25 * I2, p_d=0.8, fov_radius_m=0.6)
        gm = mixture((0.5, (0, 0), I2), (0.3, (5, 5), 2 * I2))
        out = update(gm, np.empty((0, 2)), sensor, np.zeros(2))
        # first component is inside the FoV, second far outside
        assert out.weights == pytest.approx([0.1, 0.3])
        assert out.means == pytest.approx(gm.means)
        assert out.covariances == pytest.approx(gm.covariances)

    def test_hand_worked_detection_clutter_free(self):
        gm = mixture((0.5, (0, 0), I2))
        out = update(gm, [[0.0, 0.0]], wide_sensor(), np.zeros(2))
        assert out.j_count == 2
        assert out.weights[0] == pytest.approx(0.1, abs=1e-12)
        assert out.weights[1] == pytest.approx(1.0, abs=1e-12)
        assert out.means[1] == pytest.approx([0, 0])
        assert out.covariances[1] == pytest.approx(0.2 * I2, abs=1e-12)

    def test_hand_worked_detection_with_clutter(self):
        kappa = 3.98e-3
        gm = mixture((0.5, (0, 0), I2))
        out = update(gm, [[0.0, 0.0]], wide_sensor(kappa=lambda z: kappa), np.zeros(2))
        num = 0.8 * 0.5 / (2 * np.pi * 1.25)
        assert out.weights[1] == pytest.approx(num / (num + kappa), abs=1e-12)
        assert out.weights[1] == pytest.approx(0.9275, abs=1e-4)

    def test_component_outside_fov_passes_through(self):
        sensor = SensorModel(h=I2, r=0.25 * I2, p_d=0.8, fov_radius_m=0.6)
        gm = mixture((0.7, (5, 0), I2))
        out = update(gm, [[5.0, 0.0]], sensor, np.zeros(2))
        assert out.j_count == 1
        assert out.weights[0] == pytest.approx(0.7)
        assert out.means[0] == pytest.approx([5, 0])

    def test_kalman_correction_values(self):
        # P = I, R = 0.25 I: gain 0.8, posterior covariance 0.2 I
        gm = mixture((0.5, (1, 1), I2))
        z = np.array([2.0, 0.0])
        out = update(gm, [z], wide_sensor(p_d=1.0), np.zeros(2))
        assert out.j_count == 1
        expected_mean = np.array([1, 1]) + 0.8 * (z - np.array([1, 1]))
        assert out.means[0] == pytest.approx(expected_mean)
        assert out.covariances[0] == pytest.approx(0.2 * I2)

    def test_empty_predicted(self):
        out = update(GaussianMixture.empty(), [[0.0, 0.0]], wide_sensor(), np.zeros(2))
        assert out.j_count == 0

    def test_non_finite_innovation_surfaces(self):
        gm = GaussianMixture([1.0], [[0, 0]], [np.full((2, 2), np.nan)], validate=False)
        with pytest.raises(NumericError):
            update(gm, [[0.0, 0.0]], wide_sensor(), np.zeros(2))


class TestPruneMerge:
    def test_truncation(self):
        gm = mixture((0.9, (0, 0), I2), (5e-4, (3, 3), I2))
        out = prune_merge(gm, PruneMergeConfig(1e-3, 4.0, 100))
        assert out.j_count == 1
        assert out.weights[0] == pytest.approx(0.9)

    def test_boundary_weight_kept(self):
        gm = mixture((1e-3, (0, 0), I2), (0.5, (9, 9), I2))
        out = prune_merge(gm, PruneMergeConfig(1e-3, 4.0, 100))
        assert out.j_count == 2

    def test_identical_components_merge(self):
        gm = mixture((0.3, (1, 2), I2), (0.3, (1, 2), I2))
        out = prune_merge(gm, PruneMergeConfig(0.0, 4.0, 100))
        assert out.j_count == 1
        assert out.weights[0] == pytest.approx(0.6)
        assert out.means[0] == pytest.approx([1, 2])
        assert out.covariances[0] == pytest.approx(I2)

    def test_weighted_average_merge(self):
        gm = mixture((0.2, (0, 0), I2), (0.6, (1, 0), I2))
        out = prune_merge(gm, PruneMergeConfig(0.0, 4.0, 100))
        assert out.j_count == 1
        assert out.means[0] == pytest.approx([0.75, 0.0])
        # moment-matched covariance picks up the mean-spread term
        exp_xx = (0.2 * (1 + 0.75**2) + 0.6 * (1 + 0.25**2)) / 0.8
        assert out.covariances[0][0, 0] == pytest.approx(exp_xx)
        assert out.covariances[0][1, 1] == pytest.approx(1.0)

    def test_distant_components_stay_separate(self):
        gm = mixture((0.2, (0, 0), I2), (0.6, (10, 0), I2))
        out = prune_merge(gm, PruneMergeConfig(0.0, 4.0, 100))
        assert out.j_count == 2
        # heaviest cluster reported first
        assert out.weights == pytest.approx([0.6, 0.2])

    def test_mass_preserved_by_merging(self):
        rng = np.random.default_rng(3)
        j = 40
        gm = GaussianMixture(rng.random(j), rng.normal(scale=2.0, size=(j, 2)),
                             np.repeat(I2[None], j, axis=0))
        out = prune_merge(gm, PruneMergeConfig(0.0, 4.0, 100))
        assert out.total_mass() == pytest.approx(gm.total_mass(), abs=1e-9)
        assert out.j_count <= gm.j_count

    def test_component_cap(self):
        gm = mixture(*[(w, (10 * w, 50 * w), I2) for w in (0.1, 0.4, 0.3, 0.2)])
        out = prune_merge(gm, PruneMergeConfig(0.0, 1e-6, 2))
        assert out.j_count == 2
        assert sorted(out.weights, reverse=True) == pytest.approx([0.4, 0.3])


class TestExtractStates:
    def test_threshold(self):
        gm = mixture((0.9, (1, 1), I2), (0.4, (2, 2), I2))
        assert len(extract_states(gm, 0.5)) == 1

    def test_empty(self):
        assert extract_states(GaussianMixture.empty(), 0.5) == []

    def test_ordering(self):
        gm = mixture((0.51, (1, 1), I2), (0.52, (2, 2), I2), (0.95, (3, 3), I2))
        out = extract_states(gm, 0.5)
        assert [w for _, w, _ in out] == pytest.approx([0.95, 0.52, 0.51])
        assert out[0][0] == pytest.approx([3, 3])


class TestEstimateCount:
    def test_rounds_up(self):
        gm = mixture((0.9, (0, 0), I2), (0.8, (1, 1), I2), (0.9, (2, 2), I2))
        assert estimate_count(gm) == 3

    def test_empty(self):
        assert estimate_count(GaussianMixture.empty()) == 0

    def test_exact_integer_mass(self):
        gm = mixture((1.0, (0, 0), I2), (1.0, (1, 1), I2), (1.0, (2, 2), I2))
        assert estimate_count(gm) == 3


class TestIntensity:
    def test_peak_value(self):
        gm = mixture((0.7, (1, 1), I2))
        assert intensity_at(gm, (1, 1)) == pytest.approx(0.7 / (2 * np.pi))

    def test_empty(self):
        assert intensity_at(GaussianMixture.empty(), (0, 0)) == 0.0

    def test_quadrature_integral_matches_mass(self):
        gm = mixture((0.7, (-1, 0.5), I2), (0.5, (2, -1), 0.5 * I2))
        xs = np.arange(-9.0, 9.0 + 1e-9, 0.05)
        ys = np.arange(-9.0, 9.0 + 1e-9, 0.05)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        integral = intensity_many(gm, pts).sum() * 0.05**2
        assert integral == pytest.approx(gm.total_mass(), rel=0.01)
