"""Product chain over several independent walkers and exact meeting-time oracles.

Joint robot motion is the product of the per-robot walk chains: the joint
transition probability is the product of the individual entries. Co-location
events are hitting times of the diagonal-like sets of this chain, so small
instances admit exact expected meeting statistics through linear solves.
These oracles exist for verification; simulation never builds the product
chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ModelError, StateSpaceCapError
from .grid import TransitionMatrix, stationary_distribution

DEFAULT_STATE_CAP = 10**6
DEFAULT_SOLVE_CAP = 20_000


@dataclass(frozen=True)
class CompositeChain:
    """Joint chain of ``n_robots`` independent walkers on a shared base chain.

    States are tuples of node ids, flattened in mixed radix with robot 0 as
    the most significant digit. The transition structure is kept in product
    form; dense/sparse realizations are built only for verification solves.
    """

    base: TransitionMatrix
    n_robots: int

    @property
    def n_nodes(self) -> int:
        return self.base.dim

    @property
    def state_space_size(self) -> int:
        return self.n_nodes**self.n_robots

    def pack(self, state: tuple[int, ...]) -> int:
        if len(state) != self.n_robots:
            raise ModelError(f"state {state} does not have {self.n_robots} entries")
        flat = 0
        for node in state:
            if not 0 <= node < self.n_nodes:
                raise ModelError(f"node {node} out of range for {self.n_nodes}-node chain")
            flat = flat * self.n_nodes + node
        return flat

    def unpack(self, flat: int) -> tuple[int, ...]:
        nodes = []
        for _ in range(self.n_robots):
            nodes.append(flat % self.n_nodes)
            flat //= self.n_nodes
        return tuple(reversed(nodes))

    def entry(self, src: tuple[int, ...], dst: tuple[int, ...]) -> float:
        """Joint transition probability: product of per-robot entries."""
        if len(src) != self.n_robots or len(dst) != self.n_robots:
            raise ModelError("composite states must list one node per robot")
        p = 1.0
        for a, b in zip(src, dst):
            p *= self.base.matrix[a, b]
        return float(p)

    def to_sparse(self) -> sp.csr_matrix:
        """Materialize the joint matrix (Kronecker power of the base)."""
        return reduce(lambda q, _: sp.kron(q, self.base.matrix, format="csr"),
                      range(self.n_robots - 1), self.base.matrix.tocsr())

    def node_digits(self) -> np.ndarray:
        """(n_robots, size) array: node of each robot in every flat state."""
        states = np.arange(self.state_space_size)
        digits = np.empty((self.n_robots, self.state_space_size), dtype=np.int64)
        for a in range(self.n_robots):
            digits[a] = (states // self.n_nodes ** (self.n_robots - 1 - a)) % self.n_nodes
        return digits


def build_composite(matrix: TransitionMatrix, n_robots: int,
                    cap: int = DEFAULT_STATE_CAP) -> CompositeChain:
    """Construct the joint chain; refuses state spaces above ``cap``."""
    if n_robots < 1:
        raise ModelError(f"n_robots must be >= 1, got {n_robots}")
    size = matrix.dim**n_robots
    if size > cap:
        raise StateSpaceCapError(
            f"composite state space {matrix.dim}^{n_robots} = {size} exceeds cap {cap}"
        )
    return CompositeChain(matrix, n_robots)


def meeting_states(chain: CompositeChain, robot: int = 0) -> np.ndarray:
    """Boolean mask over flat states where ``robot`` shares a node with
    at least one other robot."""
    digits = chain.node_digits()
    mask = np.zeros(chain.state_space_size, dtype=bool)
    for other in range(chain.n_robots):
        if other != robot:
            mask |= digits[other] == digits[robot]
    return mask


def expected_hitting_time(chain: CompositeChain, targets: np.ndarray,
                          solve_cap: int = DEFAULT_SOLVE_CAP) -> np.ndarray:
    """Expected steps to first reach the target set, from every flat state.

    Solves (I - Q_off) h = 1 over the non-target states. The walk chain is
    positive recurrent, so on valid inputs the system is nonsingular; a
    singular or non-finite solve raises ModelError.
    """
    size = chain.state_space_size
    if size > solve_cap:
        raise StateSpaceCapError(
            f"composite state space {size} exceeds dense-solve cap {solve_cap}"
        )
    if not targets.any():
        raise ModelError("target set is empty; hitting time undefined")
    q = chain.to_sparse()
    off = ~targets
    n_off = int(off.sum())
    h = np.zeros(size)
    if n_off:
        a = sp.identity(n_off, format="csr") - q[off][:, off]
        h_off = spla.spsolve(a.tocsc(), np.ones(n_off))
        if not np.all(np.isfinite(h_off)) or np.any(h_off <= 0):
            raise ModelError("hitting-time system is singular; target set unreachable")
        h[off] = h_off
    return h


def expected_meeting_time(chain: CompositeChain, start: tuple[int, ...],
                          solve_cap: int = DEFAULT_SOLVE_CAP) -> float:
    """Expected steps until two walkers first share a node.

    ``start`` gives both walkers' nodes; a co-located start returns 0.
    Defined for exactly two robots (the pairwise meeting process).
    """
    if chain.state_space_size > solve_cap:
        raise StateSpaceCapError(
            f"composite state space {chain.state_space_size} exceeds "
            f"dense-solve cap {solve_cap}"
        )
    if chain.n_robots != 2:
        raise ModelError("meeting time is defined for a pair of robots")
    if start[0] == start[1]:
        return 0.0
    h = expected_hitting_time(chain, meeting_states(chain, 0), solve_cap=solve_cap)
    return float(h[chain.pack(start)])


def stationary_interarrival_time(chain: CompositeChain, robot: int = 0,
                                 solve_cap: int = DEFAULT_SOLVE_CAP) -> float:
    """Mean steps between successive co-locations of ``robot`` with anyone,
    for the stationary encounter process.

    Computed as the expected return time to the meeting set when the start
    is drawn from the stationary distribution conditioned on that set; this
    is the long-run mean inter-arrival time of the renewal sequence.
    """
    targets = meeting_states(chain, robot)
    h = expected_hitting_time(chain, targets, solve_cap=solve_cap)
    pi = stationary_distribution(chain.base)
    digits = chain.node_digits()
    pi_joint = np.ones(chain.state_space_size)
    for a in range(chain.n_robots):
        pi_joint *= pi[digits[a]]
    q = chain.to_sparse()
    ret = 1.0 + q.dot(h)
    w = pi_joint[targets]
    return float(np.dot(w / w.sum(), ret[targets]))
