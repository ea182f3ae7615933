"""Scenario construction, run execution, Monte Carlo replication, and
summary statistics (mean inter-arrival time, reward percentage,
convergence time, position error)."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .composite import build_composite, stationary_interarrival_time
from .errors import ConfigurationError, ModelError
from .gmphd import BirthModel, MotionModel, PruneMergeConfig, SpawnModel, estimate_count
from .grid import GridGraph, TransitionMatrix, build_grid, build_transition_matrix
from .sensing import ClutterModel, SensorModel
from .swarm import RenewalLog, RobotState, TrackedTargetSet, World, step_swarm

# stream purpose tags for seed derivation: (run seed, purpose, robot id)
PURPOSE_PLACEMENT = 1
PURPOSE_WALK = 2
PURPOSE_SENSE = 3
PURPOSE_WALK_STUDY = 4

PAPER_BIRTH_BEARINGS = (np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4)


def substream(seed: int, purpose: int, robot: int = 0) -> np.random.Generator:
    """Documented seed derivation: every stream is keyed by
    (run seed, purpose tag, robot id)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, purpose, robot))))


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one simulation setup. Defaults reproduce the
    three-robot base case; see the shipped config files for the Monte Carlo
    scenarios."""

    name: str = "scenario"
    grid_width_m: float = 5.0
    grid_height_m: float = 5.0
    grid_spacing_m: float = 1.0
    n_robots: int = 3
    placement: str = "uniform"
    initial_nodes: tuple[int, ...] = ()
    targets: tuple[tuple[float, float], ...] = ()
    horizon_steps: int = 300
    seed: int = 0
    detection_probability: float = 0.8
    fov_radius_m: float = 0.6
    measurement_noise_var: float = 0.25
    survival_probability: float = 0.1
    process_noise_var: float = 0.2
    birth_weights: tuple[float, ...] = (0.1, 0.1, 0.1, 0.1)
    birth_bearings_rad: tuple[float, ...] = PAPER_BIRTH_BEARINGS
    birth_radius_fraction: float = 0.8
    birth_covariance_var: float = 0.5
    spawn_enabled: bool = False
    clutter_intensity_per_m2: float = 3.98e-3
    truncation_threshold: float = 1e-3
    merge_threshold: float = 4.0
    max_components: int = 100
    extraction_threshold: float = 0.5
    dedup_radius_m: float = 0.5

    def validate(self) -> "ScenarioConfig":
        def positive(value, name):
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")

        def probability(value, name):
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")

        positive(self.grid_width_m, "grid_width_m")
        positive(self.grid_height_m, "grid_height_m")
        positive(self.grid_spacing_m, "grid_spacing_m")
        positive(self.fov_radius_m, "fov_radius_m")
        positive(self.measurement_noise_var, "measurement_noise_var")
        positive(self.dedup_radius_m, "dedup_radius_m")
        if self.n_robots < 1:
            raise ConfigurationError(f"n_robots must be >= 1, got {self.n_robots}")
        if self.horizon_steps < 0:
            raise ConfigurationError(f"horizon_steps must be >= 0, got {self.horizon_steps}")
        probability(self.detection_probability, "detection_probability")
        probability(self.survival_probability, "survival_probability")
        if self.process_noise_var < 0:
            raise ConfigurationError("process_noise_var must be nonnegative")
        if self.clutter_intensity_per_m2 < 0:
            raise ConfigurationError("clutter_intensity_per_m2 must be nonnegative")
        if self.truncation_threshold < 0:
            raise ConfigurationError("truncation_threshold must be nonnegative")
        if self.merge_threshold < 0:
            raise ConfigurationError("merge_threshold must be nonnegative")
        if self.max_components < 1:
            raise ConfigurationError("max_components must be >= 1")
        if self.extraction_threshold < 0:
            raise ConfigurationError("extraction_threshold must be nonnegative")
        if len(self.birth_weights) != len(self.birth_bearings_rad):
            raise ConfigurationError("birth_weights and birth_bearings_rad differ in length")
        if self.placement not in ("uniform", "fixed"):
            raise ConfigurationError(f"placement must be uniform or fixed, got {self.placement}")
        for x, y in self.targets:
            if not (0 <= x <= self.grid_width_m and 0 <= y <= self.grid_height_m):
                raise ConfigurationError(f"targets entry ({x}, {y}) lies outside the environment")
        return self

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs).validate()


def build_models(cfg: ScenarioConfig):
    """Instantiate the immutable model objects a config describes."""
    grid = build_grid(cfg.grid_width_m, cfg.grid_height_m, cfg.grid_spacing_m)
    transition = build_transition_matrix(grid)
    clutter = None
    kappa_fn = None
    if cfg.clutter_intensity_per_m2 > 0:
        clutter = ClutterModel.for_disc(cfg.clutter_intensity_per_m2, cfg.fov_radius_m)
        kappa_fn = clutter.density_fn()
    sensor = SensorModel(
        h=np.eye(2), r=cfg.measurement_noise_var * np.eye(2),
        p_d=cfg.detection_probability, fov_radius_m=cfg.fov_radius_m,
        clutter_intensity_fn=kappa_fn,
    )
    motion = MotionModel(f=np.eye(2), q=cfg.process_noise_var * np.eye(2),
                         survival_probability=cfg.survival_probability)
    birth = BirthModel(
        weights=cfg.birth_weights, bearings_rad=cfg.birth_bearings_rad,
        covariances=cfg.birth_covariance_var * np.eye(2),
        radius_fraction=cfg.birth_radius_fraction, fov_radius_m=cfg.fov_radius_m,
    )
    spawn = SpawnModel() if not cfg.spawn_enabled else SpawnModel(
        weights=[0.05], f=[np.eye(2)], d=[[0.0, 0.0]],
        q=[cfg.process_noise_var * np.eye(2)], enabled=True,
    )
    prune_cfg = PruneMergeConfig(cfg.truncation_threshold, cfg.merge_threshold,
                                 cfg.max_components)
    return grid, transition, sensor, clutter, motion, birth, spawn, prune_cfg


def make_world(cfg: ScenarioConfig, run_seed: int) -> World:
    cfg.validate()
    grid, transition, sensor, clutter, motion, birth, spawn, prune_cfg = build_models(cfg)
    if cfg.placement == "fixed":
        if len(cfg.initial_nodes) != cfg.n_robots:
            raise ConfigurationError(
                f"initial_nodes must list {cfg.n_robots} nodes, got {len(cfg.initial_nodes)}"
            )
        nodes = [int(n) for n in cfg.initial_nodes]
        if any(not 0 <= n < grid.n_nodes for n in nodes):
            raise ConfigurationError("initial_nodes contains an out-of-range node id")
    else:
        placement_rng = substream(run_seed, PURPOSE_PLACEMENT)
        nodes = [int(n) for n in placement_rng.integers(0, grid.n_nodes, cfg.n_robots)]
    robots = [
        RobotState(i, nodes[i],
                   substream(run_seed, PURPOSE_WALK, i),
                   substream(run_seed, PURPOSE_SENSE, i))
        for i in range(cfg.n_robots)
    ]
    return World(grid, transition, robots, np.array(cfg.targets, dtype=float).reshape(-1, 2),
                 sensor, clutter, motion, birth, spawn, prune_cfg,
                 cfg.extraction_threshold, cfg.dedup_radius_m)


@dataclass
class RunRecord:
    """Everything one run produced: per-step per-robot series, encounter
    and renewal logs, final filter/tracked state, and convergence info."""

    horizon: int
    n_robots: int
    seed: int
    nodes: np.ndarray
    m_sizes: np.ndarray
    est_counts: np.ndarray
    detected_true: np.ndarray
    encounters: list
    renewal_log: RenewalLog
    final_tracked: list[TrackedTargetSet]
    final_mixtures: list
    convergence_step: int | None
    rmse_at_convergence: float | None
    tracked_at_convergence: list[TrackedTargetSet] | None

    def all_taus(self) -> list[int]:
        taus = []
        for rid in self.renewal_log.robot_ids:
            taus.extend(self.renewal_log.taus(rid))
        return taus


@dataclass
class RunSummary:
    """Slim per-replicate result used by Monte Carlo aggregation."""

    seed: int
    tau_sum: float
    tau_count: int
    convergence_step: int | None
    rmse_at_convergence: float | None
    detected_mean: np.ndarray
    m_size_mean: np.ndarray
    final_m_sizes: np.ndarray

    @property
    def mean_tau(self) -> float | None:
        return self.tau_sum / self.tau_count if self.tau_count else None


@dataclass(frozen=True)
class SummaryStats:
    """Aggregate statistics over a batch of runs."""

    mean_inter_arrival_steps: float | None
    mean_reward_pct: float | None
    convergence_step: float | None
    position_rmse_m: float | None
    n_runs: int

    def to_json_dict(self) -> dict:
        return {
            "mean_inter_arrival_steps": self.mean_inter_arrival_steps,
            "mean_reward_pct": self.mean_reward_pct,
            "convergence_step": self.convergence_step,
            "position_rmse_m": self.position_rmse_m,
        }


def greedy_match(estimates: np.ndarray, truth: np.ndarray):
    """Greedy nearest-neighbor one-to-one matching by ascending distance.

    Returns (pairs, unmatched_estimates, unmatched_truth) where pairs is a
    list of (estimate index, truth index, distance).
    """
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if not len(estimates) or not len(truth):
        return [], list(range(len(estimates))), list(range(len(truth)))
    d = np.sqrt(((estimates[:, None, :] - truth[None, :, :]) ** 2).sum(-1))
    pairs = []
    free_e = set(range(len(estimates)))
    free_t = set(range(len(truth)))
    order = np.dstack(np.unravel_index(np.argsort(d, axis=None, kind="stable"), d.shape))[0]
    for e, t in order:
        if e in free_e and t in free_t:
            pairs.append((int(e), int(t), float(d[e, t])))
            free_e.discard(int(e))
            free_t.discard(int(t))
            if not free_e or not free_t:
                break
    return pairs, sorted(free_e), sorted(free_t)


@dataclass(frozen=True)
class PositionErrorReport:
    rmse_m: float
    n_matched: int
    n_missed_targets: int
    n_extra_estimates: int


def _pooled_rmse(tracked_sets, truth: np.ndarray) -> PositionErrorReport:
    sq = []
    missed = 0
    extra = 0
    for ts in tracked_sets:
        pairs, free_e, free_t = greedy_match(ts.positions, truth)
        sq.extend(dist**2 for _, _, dist in pairs)
        missed += len(free_t)
        extra += len(free_e)
    rmse = math.sqrt(sum(sq) / len(sq)) if sq else float("nan")
    return PositionErrorReport(rmse, len(sq), missed, extra)


def position_errors(record: RunRecord, true_targets) -> PositionErrorReport:
    """Greedy one-to-one matching of every robot's final tracked positions
    to the true targets; unmatched entities are counted separately."""
    truth = np.asarray(true_targets, dtype=float).reshape(-1, 2)
    return _pooled_rmse(record.final_tracked, truth)


def position_rmse(record: RunRecord, true_targets) -> float:
    """Root-mean-square position error over matched estimate/target pairs."""
    report = position_errors(record, true_targets)
    if report.n_matched == 0:
        raise ModelError("no tracked estimates to match against the targets")
    return report.rmse_m


class _ConvergenceTracker:
    """Cumulative per-robot coverage of the true targets.

    A target counts as detected by a robot from the first step at which the
    robot's tracked set holds an entry within the deduplication radius of
    it (coverage never un-happens: the tracked sets are union-accumulated).
    """

    def __init__(self, n_robots: int, targets: np.ndarray, radius: float):
        self.targets = targets
        self.r2 = radius**2
        self.flags = np.zeros((n_robots, len(targets)), dtype=bool)
        self.counts = [0] * n_robots
        self._versions = [0] * n_robots
        self._n_complete = 0 if len(targets) else n_robots

    def refresh(self, robots) -> None:
        n_targets = len(self.targets)
        for i, robot in enumerate(robots):
            if robot.version == self._versions[i]:
                continue
            self._versions[i] = robot.version
            if n_targets and len(robot.tracked):
                d2 = ((robot.tracked.positions[:, None, :] - self.targets[None]) ** 2).sum(-1)
                self.flags[i] |= (d2 <= self.r2).any(axis=0)
                count = int(self.flags[i].sum())
                if count == n_targets and self.counts[i] < n_targets:
                    self._n_complete += 1
                self.counts[i] = count

    def mean_count(self) -> float:
        return sum(self.counts) / len(self.counts) if self.counts else 0.0

    def complete(self) -> bool:
        return self._n_complete == len(self.counts)


def _execute(cfg: ScenarioConfig, seed: int, full: bool):
    world = make_world(cfg, seed)
    n = cfg.n_robots
    k_max = cfg.horizon_steps
    targets = world.targets
    tracker = _ConvergenceTracker(n, targets, cfg.dedup_radius_m)

    if full:
        nodes = np.zeros((k_max + 1, n), dtype=np.int32)
        m_sizes = np.zeros((k_max + 1, n), dtype=np.int32)
        est_counts = np.zeros((k_max + 1, n), dtype=np.int32)
        detected = np.zeros((k_max + 1, n), dtype=np.int32)
        nodes[0] = [r.node for r in world.robots]
    detected_mean = np.zeros(k_max + 1, dtype=np.float32)
    m_size_mean = np.zeros(k_max + 1, dtype=np.float32)

    convergence = 0 if len(targets) == 0 else None
    rmse_conv = None
    tracked_conv = [TrackedTargetSet.empty() for _ in range(n)] if convergence == 0 else None

    for k in range(1, k_max + 1):
        step_swarm(world)
        tracker.refresh(world.robots)
        detected_mean[k] = tracker.mean_count()
        m_size_mean[k] = sum(len(r.tracked) for r in world.robots) / n
        if full:
            nodes[k] = [r.node for r in world.robots]
            m_sizes[k] = [len(r.tracked) for r in world.robots]
            est_counts[k] = [estimate_count(r.mixture) for r in world.robots]
            detected[k] = tracker.counts
        if convergence is None and tracker.complete():
            convergence = k
            tracked_conv = [r.tracked for r in world.robots]
            rmse_conv = _pooled_rmse(tracked_conv, targets).rmse_m

    if full:
        return RunRecord(
            horizon=k_max, n_robots=n, seed=seed, nodes=nodes, m_sizes=m_sizes,
            est_counts=est_counts, detected_true=detected,
            encounters=list(world.encounters), renewal_log=world.renewal_log,
            final_tracked=[r.tracked for r in world.robots],
            final_mixtures=[r.mixture for r in world.robots],
            convergence_step=convergence, rmse_at_convergence=rmse_conv,
            tracked_at_convergence=tracked_conv,
        )
    taus = []
    for rid in world.renewal_log.robot_ids:
        taus.extend(world.renewal_log.taus(rid))
    return RunSummary(
        seed=seed, tau_sum=float(sum(taus)), tau_count=len(taus),
        convergence_step=convergence, rmse_at_convergence=rmse_conv,
        detected_mean=detected_mean, m_size_mean=m_size_mean,
        final_m_sizes=np.array([len(r.tracked) for r in world.robots]),
    )


def run_scenario(cfg: ScenarioConfig, seed: int | None = None) -> RunRecord:
    """Execute one full run; deterministic given (config, seed)."""
    return _execute(cfg, cfg.seed if seed is None else seed, full=True)


def _summary_job(args):
    cfg, seed = args
    return _execute(cfg, seed, full=False)


def run_summaries(cfg: ScenarioConfig, n_runs: int, seed_base: int | None = None,
                  workers: int = 1) -> list[RunSummary]:
    """Independent replicates seeded seed_base + run index. Results are
    ordered by run index, so they do not depend on worker scheduling."""
    if n_runs < 1:
        raise ConfigurationError(f"n_runs must be >= 1, got {n_runs}")
    base = cfg.seed if seed_base is None else seed_base
    jobs = [(cfg, base + i) for i in range(n_runs)]
    if workers <= 1 or n_runs == 1:
        return [_summary_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_summary_job, jobs, chunksize=max(1, n_runs // (4 * workers))))


def mean_inter_arrival(results) -> float | None:
    """Pooled arithmetic mean of every completed inter-arrival interval
    across robots and runs; None when no interval completed."""
    if isinstance(results, (RunRecord, RunSummary)):
        results = [results]
    total = 0.0
    count = 0
    for rec in results:
        if isinstance(rec, RunSummary):
            total += rec.tau_sum
            count += rec.tau_count
        else:
            taus = rec.all_taus()
            total += sum(taus)
            count += len(taus)
    return total / count if count else None


def _m_size_mean_series(rec) -> np.ndarray:
    if isinstance(rec, RunSummary):
        return rec.m_size_mean
    return rec.m_sizes.mean(axis=1)


def reward_percentage(results, true_count: int) -> float | None:
    """Mean tracked-set cardinality per robot at the floor of the pooled
    mean inter-arrival time, as a percentage of the true target count."""
    if true_count < 1:
        raise ConfigurationError(f"true_count must be >= 1, got {true_count}")
    if isinstance(results, (RunRecord, RunSummary)):
        results = [results]
    tau = mean_inter_arrival(results)
    if tau is None:
        return None
    values = []
    for rec in results:
        series = _m_size_mean_series(rec)
        k_eval = min(int(tau), len(series) - 1)
        values.append(series[k_eval])
    return 100.0 * float(np.mean(values)) / true_count


def convergence_time(record: RunRecord, true_count: int) -> int | None:
    """First step at which every robot's tracked set covers ``true_count``
    targets (entries matched one-to-one within the dedup radius); None if
    that never happens within the horizon."""
    if true_count == 0:
        return 0
    covered = record.detected_true.min(axis=1) >= true_count
    hits = np.nonzero(covered)[0]
    return int(hits[0]) if len(hits) else None


def monte_carlo(cfg: ScenarioConfig, n_runs: int, seed_base: int | None = None,
                workers: int = 1) -> SummaryStats:
    """Replicate the scenario n_runs times (robots re-placed each run,
    targets fixed) and aggregate the summary statistics."""
    summaries = run_summaries(cfg, n_runs, seed_base, workers)
    return summarize(summaries, len(cfg.targets))


def summarize(summaries: list[RunSummary], true_count: int) -> SummaryStats:
    tau = mean_inter_arrival(summaries)
    reward = reward_percentage(summaries, true_count) if true_count else None
    conv = [s.convergence_step for s in summaries if s.convergence_step is not None]
    rmse = [s.rmse_at_convergence for s in summaries if s.rmse_at_convergence is not None]
    return SummaryStats(
        mean_inter_arrival_steps=tau,
        mean_reward_pct=reward,
        convergence_step=float(np.median(conv)) if conv else None,
        position_rmse_m=float(np.mean(rmse)) if rmse else None,
        n_runs=len(summaries),
    )


def walk_interarrival_study(transition: TransitionMatrix, n_robots: int,
                            horizon: int, n_runs: int, seed: int,
                            start: str = "uniform") -> list[np.ndarray]:
    """Walk-only encounter study: simulate just the random walks of
    ``n_robots`` robots for ``horizon`` steps in ``n_runs`` independent
    replicates and return robot 0's renewal epochs per run.

    ``start="stationary_colocated"`` places all robots on one shared node
    drawn from the stationary co-location law (the stationary renewal
    regime, so successive inter-arrivals are identically distributed);
    ``start="uniform"`` places robots independently and uniformly.
    """
    from .grid import stationary_distribution

    rng = substream(seed, PURPOSE_WALK_STUDY)
    s = transition.dim
    if start == "stationary_colocated":
        pi = stationary_distribution(transition)
        p_coloc = pi**2 / np.sum(pi**2)
        shared = rng.choice(s, size=n_runs, p=p_coloc)
        nodes = np.repeat(shared[:, None], n_robots, axis=1)
    elif start == "uniform":
        nodes = rng.integers(0, s, size=(n_runs, n_robots))
    else:
        raise ConfigurationError(f"unknown start mode {start!r}")

    met = np.zeros((n_runs, horizon + 1), dtype=bool)
    for k in range(1, horizon + 1):
        u = rng.random(nodes.shape)
        nodes = transition.sample_next_batch(nodes, u)
        meet_any = np.zeros(n_runs, dtype=bool)
        for other in range(1, n_robots):
            meet_any |= nodes[:, other] == nodes[:, 0]
        met[:, k] = meet_any
    return [np.nonzero(met[run])[0].astype(np.int64) for run in range(n_runs)]


def taus_from_epochs(epochs: np.ndarray) -> np.ndarray:
    """Inter-arrival times from a renewal epoch sequence (S_0 = 0)."""
    return np.diff(epochs, prepend=0)


def expected_interarrival_oracle(cfg_or_transition, n_robots: int | None = None) -> float:
    """Exact stationary mean inter-arrival time for small instances, from
    the joint-chain linear solve."""
    if isinstance(cfg_or_transition, ScenarioConfig):
        cfg = cfg_or_transition
        transition = build_transition_matrix(
            build_grid(cfg.grid_width_m, cfg.grid_height_m, cfg.grid_spacing_m)
        )
        n_robots = cfg.n_robots
    else:
        transition = cfg_or_transition
        if n_robots is None:
            raise ConfigurationError("n_robots is required with a bare transition matrix")
    chain = build_composite(transition, n_robots)
    return stationary_interarrival_time(chain)
