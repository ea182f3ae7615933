"""Per-robot control loop and encounter-based information exchange.

Each step every robot walks one grid edge, scans, runs its intensity
filter, and folds freshly extracted target states into its tracked set.
Robots that land on the same node then exchange tracked sets: co-located
robots leave the step holding identical sets. Each co-location closes the
inter-arrival interval of both robots' renewal logs.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import OrderingError
from .gmphd import (
    BirthModel,
    GaussianMixture,
    MotionModel,
    PruneMergeConfig,
    SpawnModel,
    extract_states,
    predict,
    prune_merge,
    update,
)
from .grid import ChainPosition, GridGraph, TransitionMatrix
from .sensing import ClutterModel, SensorModel, generate_measurements

LABEL_STRIDE = 10**6


@dataclass(frozen=True)
class TrackedTarget:
    """One tracked-target tuple: label, estimated position, weight."""

    label: int
    position: np.ndarray
    weight: float


@dataclass(frozen=True)
class TrackedTargetSet:
    """Deduplicated set of tracked-target tuples, stored as parallel arrays.

    After any merge, no two entries lie within the deduplication radius of
    each other.
    """

    labels: np.ndarray
    positions: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls) -> "TrackedTargetSet":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 2)), np.empty(0))

    @classmethod
    def build(cls, labels, positions, weights) -> "TrackedTargetSet":
        return cls(
            np.asarray(labels, dtype=np.int64).reshape(-1),
            np.asarray(positions, dtype=float).reshape(-1, 2),
            np.asarray(weights, dtype=float).reshape(-1),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def entries(self) -> tuple[TrackedTarget, ...]:
        return tuple(
            TrackedTarget(int(l), p.copy(), float(w))
            for l, p, w in zip(self.labels, self.positions, self.weights)
        )


def _dedup(labels: np.ndarray, positions: np.ndarray, weights: np.ndarray,
           dedup_radius: float) -> TrackedTargetSet:
    """Greedy deduplication under a deterministic total order: heavier
    entries win, ties break on lexicographically smaller position, then
    label. Entries within the radius of an accepted entry are dropped."""
    if not len(labels):
        return TrackedTargetSet.empty()
    order = np.lexsort((labels, positions[:, 1], positions[:, 0], -weights))
    pos_sorted = positions[order]
    within = ((pos_sorted[:, None, :] - pos_sorted[None, :, :]) ** 2).sum(-1) \
        <= dedup_radius**2
    blocked = np.zeros(len(order), dtype=bool)
    kept: list[int] = []
    for i in range(len(order)):
        if blocked[i]:
            continue
        kept.append(i)
        blocked |= within[i]
    sel = order[kept]
    return TrackedTargetSet(labels[sel].copy(), positions[sel].copy(), weights[sel].copy())


def merge_rewards(m_i: TrackedTargetSet, m_j: TrackedTargetSet,
                  dedup_radius: float) -> TrackedTargetSet:
    """Union of two tracked sets, identifying entries whose positions lie
    within ``dedup_radius`` of each other; the higher-weight member of an
    identified group survives. Symmetric and order-independent."""
    return _dedup(
        np.concatenate([m_i.labels, m_j.labels]),
        np.concatenate([m_i.positions, m_j.positions]),
        np.concatenate([m_i.weights, m_j.weights]),
        dedup_radius,
    )


@dataclass(frozen=True)
class EncounterEvent:
    """Two robots sharing node ``node`` at step ``step`` (robot_i < robot_j)."""

    step: int
    robot_i: int
    robot_j: int
    node: int


class RenewalLog:
    """Per-robot renewal bookkeeping.

    For each robot the log keeps the encounter epochs S_1 < S_2 < ... (one
    per step at which the robot was co-located with at least one other),
    from which inter-arrival times tau_n = S_n - S_{n-1} (S_0 = 0) and the
    counting process T(k) = #{n : S_n <= k} follow.
    """

    def __init__(self, robot_ids):
        self._epochs: dict[int, list[int]] = {rid: [] for rid in robot_ids}

    @property
    def robot_ids(self):
        return tuple(self._epochs)

    def epochs(self, robot: int) -> list[int]:
        return list(self._epochs[robot])

    def taus(self, robot: int) -> list[int]:
        eps = self._epochs[robot]
        return [b - a for a, b in zip([0, *eps[:-1]], eps)]

    def count_at(self, robot: int, k: int) -> int:
        return bisect_right(self._epochs[robot], k)

    def n_renewals(self, robot: int) -> int:
        return len(self._epochs[robot])


def record_renewal(log: RenewalLog, event: EncounterEvent) -> RenewalLog:
    """Close the running inter-arrival interval of both robots in the pair.

    A second pairwise event at the same step (three or more co-located
    robots) is the same renewal instant and adds no epoch. Steps earlier
    than an already-recorded epoch raise OrderingError.
    """
    for robot in (event.robot_i, event.robot_j):
        eps = log._epochs[robot]
        if eps and event.step < eps[-1]:
            raise OrderingError(
                f"encounter at step {event.step} precedes last epoch {eps[-1]} "
                f"for robot {robot}"
            )
        if not eps or event.step > eps[-1]:
            eps.append(event.step)
    return log


def verify_counting_identity(log: RenewalLog, robot: int, horizon: int) -> bool:
    """Exhaustively check T(k) >= n  <=>  S_n <= k for all n, k."""
    eps = np.array(log._epochs[robot])
    ks = np.arange(horizon + 1)
    t = np.searchsorted(eps, ks, side="right")
    for n in range(1, len(eps) + 1):
        if not np.array_equal(t >= n, eps[n - 1] <= ks):
            return False
    # also: T(k) < n for n beyond the last epoch
    return np.all(t <= len(eps))


class RobotState:
    """One robot: walk position, filter state, tracked-target set, and the
    robot-local random streams (walk and sensing)."""

    __slots__ = ("id", "node", "step", "mixture", "tracked", "rng_walk",
                 "rng_sense", "_next_label", "version")

    def __init__(self, robot_id: int, node: int, rng_walk, rng_sense):
        self.id = robot_id
        self.node = node
        self.step = 0
        self.mixture = GaussianMixture.empty()
        self.tracked = TrackedTargetSet.empty()
        self.rng_walk = rng_walk
        self.rng_sense = rng_sense
        self._next_label = 0
        self.version = 0

    @property
    def position(self) -> ChainPosition:
        return ChainPosition(node=self.node, step=self.step)

    def allocate_labels(self, n: int) -> np.ndarray:
        start = self.id * LABEL_STRIDE + self._next_label
        self._next_label += n
        return np.arange(start, start + n, dtype=np.int64)


class World:
    """Mutable run state: the immutable models plus per-robot state, the
    global step counter, and the encounter/renewal logs."""

    def __init__(self, grid: GridGraph, transition: TransitionMatrix,
                 robots: list[RobotState], targets: np.ndarray,
                 sensor: SensorModel, clutter: ClutterModel | None,
                 motion: MotionModel, birth: BirthModel, spawn: SpawnModel | None,
                 prune_cfg: PruneMergeConfig, extraction_threshold: float,
                 dedup_radius_m: float):
        self.grid = grid
        self.transition = transition
        self.robots = robots
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        self.sensor = sensor
        self.clutter = clutter
        self.motion = motion
        self.birth = birth
        self.spawn = spawn
        self.prune_cfg = prune_cfg
        self.extraction_threshold = extraction_threshold
        self.dedup_radius_m = dedup_radius_m
        self.step = 0
        self.encounters: list[EncounterEvent] = []
        self.renewal_log = RenewalLog([r.id for r in robots])


def detect_encounters(robots) -> list[EncounterEvent]:
    """One event per unordered robot pair sharing a node; three co-located
    robots yield three pairwise events. Requires all robots at the same step."""
    steps = {r.step for r in robots}
    if len(steps) > 1:
        raise OrderingError(f"robots are at different steps: {sorted(steps)}")
    by_node: dict[int, list[int]] = {}
    for r in robots:
        by_node.setdefault(r.node, []).append(r.id)
    step_k = next(iter(steps)) if steps else 0
    events = []
    for node in sorted(by_node):
        ids = sorted(by_node[node])
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                events.append(EncounterEvent(step_k, ids[a], ids[b], node))
    return events


def _exchange(world: World, events: list[EncounterEvent]) -> None:
    """Co-located robots pool their tracked sets: each node group is merged
    with the same deduplication rule as a pairwise exchange, and every
    member leaves with the identical merged set."""
    groups: dict[int, set[int]] = {}
    for ev in events:
        groups.setdefault(ev.node, set()).update((ev.robot_i, ev.robot_j))
    by_id = {r.id: r for r in world.robots}
    for node in sorted(groups):
        members = sorted(groups[node])
        sets = [by_id[rid].tracked for rid in members]
        merged = _dedup(
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.weights for s in sets]),
            world.dedup_radius_m,
        )
        for rid in members:
            robot = by_id[rid]
            if len(robot.tracked) != len(merged) or not np.array_equal(
                robot.tracked.labels, merged.labels
            ):
                robot.version += 1
            robot.tracked = merged


def step_swarm(world: World) -> World:
    """Advance the whole swarm by one step.

    Per robot, in order: walk one edge, scan, predict (birth ring centered
    on the new position), update, reduce the mixture, extract states above
    the threshold, and fold them into the tracked set. Then detect
    co-locations, exchange tracked sets, and record renewals.
    """
    k = world.step + 1
    coords = world.grid.coords
    for robot in world.robots:
        robot.node = world.transition.sample_next(robot.node, robot.rng_walk.random())
        robot.step = k
        pos = coords[robot.node]
        scan = generate_measurements(
            pos, world.targets, world.sensor, world.clutter, robot.rng_sense,
            robot_id=robot.id, step=k,
        )
        gm = predict(robot.mixture, world.motion, world.birth, world.spawn, pos)
        gm = update(gm, scan.points, world.sensor, pos)
        gm = prune_merge(gm, world.prune_cfg)
        robot.mixture = gm
        extracted = extract_states(gm, world.extraction_threshold)
        if extracted:
            new = TrackedTargetSet.build(
                robot.allocate_labels(len(extracted)),
                [m for m, _, _ in extracted],
                [w for _, w, _ in extracted],
            )
            robot.tracked = merge_rewards(robot.tracked, new, world.dedup_radius_m)
            robot.version += 1
    world.step = k
    events = detect_encounters(world.robots)
    if events:
        _exchange(world, events)
        for ev in events:
            record_renewal(world.renewal_log, ev)
        world.encounters.extend(events)
    return world
