"""Spatial lattice environment and the random-walk chain over its nodes.

Robots move on the vertices of a square grid. Every node keeps a self-edge
("stay"), and the next node is drawn uniformly over the current node's
neighbors including itself, giving transition probability 1/(d+1) along
each incident edge where d is the number of non-self neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, ModelError

STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITER = 10**6
STATIONARY_RESIDUAL = 1e-10


@dataclass(frozen=True)
class GridGraph:
    """Undirected lattice graph with one self-edge per node.

    Nodes are indexed row-major starting at the (0, 0) corner; coordinates
    are in meters. ``neighbors`` lists non-self neighbors only.
    """

    width_m: float
    height_m: float
    spacing_m: float
    coords: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    @property
    def degrees(self) -> np.ndarray:
        """Non-self degree of every node."""
        return np.array([len(nb) for nb in self.neighbors])

    def edge_set(self) -> frozenset[tuple[int, int]]:
        """All undirected edges as (min, max) pairs, self-edges included."""
        edges = {(i, i) for i in range(self.n_nodes)}
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                edges.add((min(i, j), max(i, j)))
        return frozenset(edges)


def build_grid(width_m: float, height_m: float, spacing_m: float = 1.0) -> GridGraph:
    """Discretize a width x height area into a 4-neighbor vertex lattice.

    Produces (width/spacing + 1) x (height/spacing + 1) nodes. Dimensions
    must be positive integer multiples of the spacing.
    """
    if width_m <= 0 or height_m <= 0 or spacing_m <= 0:
        raise ConfigurationError(
            f"grid dimensions must be positive, got "
            f"width_m={width_m}, height_m={height_m}, spacing_m={spacing_m}"
        )
    nx = _exact_multiple(width_m, spacing_m, "width_m")
    ny = _exact_multiple(height_m, spacing_m, "height_m")
    return _lattice(nx + 1, ny + 1, spacing_m, width_m, height_m)


def path_graph(n_nodes: int, spacing_m: float = 1.0) -> GridGraph:
    """Degenerate one-row lattice, used for small verification chains.

    ``path_graph(1)`` is the single-node graph whose only edge is the
    self-edge.
    """
    if n_nodes < 1:
        raise ConfigurationError(f"path graph needs n_nodes >= 1, got {n_nodes}")
    return _lattice(n_nodes, 1, spacing_m, (n_nodes - 1) * spacing_m, 0.0)


def _exact_multiple(length: float, spacing: float, name: str) -> int:
    n = round(length / spacing)
    if n < 1 or abs(length - n * spacing) > 1e-9 * max(1.0, length):
        raise ConfigurationError(
            f"{name}={length} is not an integer multiple of spacing_m={spacing}"
        )
    return n


def _lattice(nx: int, ny: int, spacing: float, width: float, height: float) -> GridGraph:
    xs = np.arange(nx) * spacing
    ys = np.arange(ny) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([gx.ravel(), gy.ravel()])
    coords.setflags(write=False)

    def node(ix, iy):
        return iy * nx + ix

    neighbors = []
    for iy in range(ny):
        for ix in range(nx):
            nbrs = []
            if ix > 0:
                nbrs.append(node(ix - 1, iy))
            if ix < nx - 1:
                nbrs.append(node(ix + 1, iy))
            if iy > 0:
                nbrs.append(node(ix, iy - 1))
            if iy < ny - 1:
                nbrs.append(node(ix, iy + 1))
            neighbors.append(tuple(sorted(nbrs)))
    return GridGraph(width, height, spacing, coords, tuple(neighbors))


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic walk matrix with per-row sampling tables.

    ``row_targets``/``row_cum`` are padded (S, L) arrays: row i holds the
    reachable nodes in ascending order and the cumulative probabilities,
    with the final cumulative entry pinned to exactly 1.0 so that any
    uniform draw in [0, 1) maps to a valid target.
    """

    matrix: sp.csr_matrix
    row_targets: np.ndarray
    row_cum: np.ndarray
    row_len: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.matrix.getrow(i).toarray().ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def sample_next(self, node: int, u: float) -> int:
        """Map a uniform draw u in [0, 1) to the successor of ``node``."""
        k = self.row_len[node]
        idx = np.searchsorted(self.row_cum[node, :k], u, side="right")
        return int(self.row_targets[node, idx])

    def sample_next_batch(self, nodes: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vectorized ``sample_next`` for arrays of nodes and draws."""
        cum = self.row_cum[nodes]
        idx = (u[..., None] >= cum).sum(axis=-1)
        return self.row_targets[nodes, idx]


def build_transition_matrix(grid: GridGraph) -> TransitionMatrix:
    """Uniform-over-incident-edges walk matrix: p_ij = 1/(d_i + 1) on every
    edge (self-edge included), zero elsewhere."""
    s = grid.n_nodes
    indptr = [0]
    indices = []
    data = []
    for i, nbrs in enumerate(grid.neighbors):
        targets = sorted((*nbrs, i))
        p = 1.0 / len(targets)
        indices.extend(targets)
        data.extend([p] * len(targets))
        indptr.append(len(indices))
    matrix = sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int32), np.array(indptr)),
        shape=(s, s),
    )
    return _with_sampling_tables(matrix)


def _with_sampling_tables(matrix: sp.csr_matrix) -> TransitionMatrix:
    s = matrix.shape[0]
    row_len = np.diff(matrix.indptr).astype(np.int32)
    width = int(row_len.max())
    row_targets = np.zeros((s, width), dtype=np.int32)
    row_cum = np.ones((s, width))
    for i in range(s):
        lo, hi = matrix.indptr[i], matrix.indptr[i + 1]
        k = hi - lo
        row_targets[i, :k] = matrix.indices[lo:hi]
        row_targets[i, k:] = matrix.indices[hi - 1]
        cum = np.cumsum(matrix.data[lo:hi])
        cum[-1] = 1.0
        row_cum[i, :k] = cum
    row_targets.setflags(write=False)
    row_cum.setflags(write=False)
    row_len.setflags(write=False)
    return TransitionMatrix(matrix, row_targets, row_cum, row_len)


@dataclass(frozen=True)
class ChainPosition:
    """Location of one walker: node id plus the discrete step index k
    (one step corresponds to one second of simulated time)."""

    node: int
    step: int


def step(pos: ChainPosition, matrix: TransitionMatrix, rng: np.random.Generator) -> ChainPosition:
    """Advance one walk step, sampling the successor from the node's row."""
    nxt = matrix.sample_next(pos.node, rng.random())
    return ChainPosition(node=nxt, step=pos.step + 1)


def is_irreducible(matrix: TransitionMatrix) -> bool:
    n_comp, _ = connected_components(matrix.matrix, directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(matrix: TransitionMatrix) -> np.ndarray:
    """Left fixed point pi with pi P = pi, found by power iteration.

    Starts from the uniform vector and iterates until successive vectors
    differ by less than 1e-12 in max norm; the result is then required to
    satisfy the 1e-10 residual contract.

    Raises ModelError for reducible matrices or failed convergence.
    """
    if not is_irreducible(matrix):
        raise ModelError("transition matrix is reducible; no unique stationary distribution")
    s = matrix.dim
    pt = matrix.matrix.T.tocsr()
    pi = np.full(s, 1.0 / s)
    for _ in range(STATIONARY_MAX_ITER):
        nxt = pt.dot(pi)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < STATIONARY_TOL:
            pi = nxt
            break
        pi = nxt
    residual = np.max(np.abs(pt.dot(pi) - pi))
    if residual >= STATIONARY_RESIDUAL:
        raise ModelError(f"power iteration residual {residual:.3e} exceeds {STATIONARY_RESIDUAL}")
    pi.setflags(write=False)
    return pi


def grid_csv_rows(grid: GridGraph):
    """Debug dump rows: (node id, x, y)."""
    for i, (x, y) in enumerate(grid.coords):
        yield i, float(x), float(y)


def transition_csv_rows(matrix: TransitionMatrix):
    """Debug dump rows: (row, col, value) for every nonzero entry."""
    coo = matrix.matrix.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        yield int(r), int(c), float(v)
