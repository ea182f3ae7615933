"""Decentralized multi-target tracking on a spatial grid.

Robot swarms random-walk a lattice, track stationary targets with
per-robot Gaussian-mixture intensity filters, and merge tracked-target
sets only when co-located; encounter statistics follow a renewal process
on the joint walk chain.
"""

from .errors import (
    ConfigurationError,
    ModelError,
    NumericError,
    OrderingError,
    StateSpaceCapError,
)
from .grid import (
    ChainPosition,
    GridGraph,
    TransitionMatrix,
    build_grid,
    build_transition_matrix,
    path_graph,
    stationary_distribution,
    step,
)
from .composite import (
    CompositeChain,
    build_composite,
    expected_hitting_time,
    expected_meeting_time,
    meeting_states,
    stationary_interarrival_time,
)

__version__ = "0.1.0"
