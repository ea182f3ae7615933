"""Independent oracles shared by the test modules.

These deliberately avoid the library's own solvers: stationary vectors come
from a dense eigendecomposition, hitting times from a dense numpy solve.
"""

import numpy as np
import scipy.linalg


def eig_stationary(p_dense: np.ndarray) -> np.ndarray:
    """Left eigenvector of eigenvalue 1, via dense eigendecomposition."""
    vals, vecs = scipy.linalg.eig(p_dense.T)
    idx = np.argmin(np.abs(vals - 1.0))
    pi = np.real(vecs[:, idx])
    pi = np.abs(pi)
    return pi / pi.sum()


def dense_hitting_times(q_dense: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Expected steps to hit the target set, dense numpy solve."""
    n = q_dense.shape[0]
    off = ~targets
    h = np.zeros(n)
    a = np.eye(off.sum()) - q_dense[np.ix_(off, off)]
    h[off] = np.linalg.solve(a, np.ones(off.sum()))
    return h


def degree_plus_one_stationary(degrees: np.ndarray) -> np.ndarray:
    """Detailed-balance closed form for the lattice walk: pi_i ~ d_i + 1."""
    w = degrees + 1.0
    return w / w.sum()
