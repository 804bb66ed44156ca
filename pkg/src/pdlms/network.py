"""
Network topology and combination matrices.

Neighborhoods always contain the node itself. Combination matrices are
left-stochastic: column ``k`` holds the weights node ``k`` puts on its
neighbors, so every column sums to one.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidConfigError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected connected graph with self-loops.

    Parameters
    ----------
    num_nodes : int
        Number of nodes ``N``.
    neighbor_sets : tuple of frozenset
        ``neighbor_sets[k]`` is the neighborhood of node ``k``, including ``k``.
    """

    num_nodes: int
    neighbor_sets: tuple

    def __post_init__(self):
        if self.num_nodes < 1:
            raise InvalidConfigError("num_nodes must be positive")
        sets = tuple(frozenset(int(l) for l in s) for s in self.neighbor_sets)
        object.__setattr__(self, "neighbor_sets", sets)
        if len(sets) != self.num_nodes:
            raise DimensionError(
                f"expected {self.num_nodes} neighbor sets, got {len(sets)}")
        for k, nk in enumerate(sets):
            if k not in nk:
                raise InvalidConfigError(f"node {k} missing from its own neighborhood")
            for l in nk:
                if not 0 <= l < self.num_nodes:
                    raise InvalidConfigError(f"node {k} lists out-of-range neighbor {l}")
                if k not in sets[l]:
                    raise InvalidConfigError(f"asymmetric link {l}-{k}")
        if not _connected(sets):
            raise InvalidConfigError("topology is not connected")

    @classmethod
    def from_edges(cls, num_nodes, edges):
        sets = [{k} for k in range(num_nodes)]
        for a, b in edges:
            sets[a].add(b)
            sets[b].add(a)
        return cls(num_nodes, tuple(sets))

    @property
    def links(self):
        """Directed pairs ``(l, k)`` with ``l`` a neighbor of ``k`` and ``l != k``, sorted."""
        return tuple(sorted((l, k) for k in range(self.num_nodes)
                            for l in self.neighbor_sets[k] if l != k))

    def degrees(self):
        """Non-self neighbor count per node."""
        return np.array([len(s) - 1 for s in self.neighbor_sets])

    def adjacency(self):
        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        for k, nk in enumerate(self.neighbor_sets):
            adj[list(nk), k] = True
        return adj

    def to_list(self):
        return [sorted(s) for s in self.neighbor_sets]


def _connected(sets):
    seen = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for l in sets[k]:
            if l not in seen:
                seen.add(l)
                queue.append(l)
    return len(seen) == len(sets)


def generate_topology(num_nodes, target_avg_neighbors, seed):
    """
    Random connected topology with a prescribed mean degree.

    A uniformly random recursive tree guarantees connectivity; extra edges are
    then sampled uniformly from the remaining pairs until the edge count is
    ``round(target_avg_neighbors * num_nodes / 2)``.

    Parameters
    ----------
    num_nodes : int
        Number of nodes, at least 2.
    target_avg_neighbors : float
        Desired mean number of non-self neighbors, in ``[1, num_nodes)``.
    seed : int
        Seed for the generator.

    Returns
    -------
    NetworkTopology
    """
    if num_nodes < 2:
        raise InvalidConfigError("generate_topology needs at least 2 nodes")
    if target_avg_neighbors < 1:
        raise InvalidConfigError("target_avg_neighbors < 1 cannot give a connected graph")
    if target_avg_neighbors >= num_nodes:
        raise InvalidConfigError("target_avg_neighbors must be below num_nodes")

    rng = np.random.default_rng(seed)
    order = rng.permutation(num_nodes)
    edges = set()
    for j in range(1, num_nodes):
        parent = order[rng.integers(j)]
        edges.add(tuple(sorted((int(order[j]), int(parent)))))

    max_edges = num_nodes * (num_nodes - 1) // 2
    wanted = min(max_edges, max(num_nodes - 1, int(round(target_avg_neighbors * num_nodes / 2))))
    remaining = [(a, b) for a in range(num_nodes) for b in range(a + 1, num_nodes)
                 if (a, b) not in edges]
    extra = wanted - len(edges)
    if extra > 0:
        pick = rng.choice(len(remaining), size=extra, replace=False)
        edges.update(remaining[p] for p in sorted(pick))
    return NetworkTopology.from_edges(num_nodes, sorted(edges))


@dataclass(frozen=True)
class CombinationMatrix:
    """Non-negative ``N x N`` weights ``a[l, k]``; ``role`` is ``"A1"`` or ``"A2"``."""

    weights: np.ndarray = field(repr=False)
    role: str = "A2"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"combination matrix must be square, got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def num_nodes(self):
        return self.weights.shape[0]

    def is_identity(self):
        return bool(np.array_equal(self.weights, np.eye(self.num_nodes)))

    def with_role(self, role):
        return CombinationMatrix(self.weights, role)


def build_uniform_combination(topology, role="A2"):
    """Weights ``1/|N_k|`` on every neighbor of node ``k`` (column ``k``)."""
    n = topology.num_nodes
    a = np.zeros((n, n))
    for k, nk in enumerate(topology.neighbor_sets):
        a[sorted(nk), k] = 1.0 / len(nk)
    return CombinationMatrix(a, role)


def identity_combination(num_nodes, role="A1"):
    """No cooperation: each node keeps only its own estimate."""
    return CombinationMatrix(np.eye(num_nodes), role)


def validate_combination(matrix, topology, tol=STOCHASTIC_TOL):
    """
    Check the combination-matrix invariants against a topology.

    Returns
    -------
    list of str
        Human-readable violations; empty when the matrix is acceptable.

    Raises
    ------
    DimensionError
        If the matrix and topology disagree on ``N``.
    """
    a = matrix.weights
    n = topology.num_nodes
    if a.shape != (n, n):
        raise DimensionError(f"matrix is {a.shape}, topology has {n} nodes")
    violations = []
    adj = topology.adjacency()
    for l, k in zip(*np.nonzero((a != 0) & ~adj)):
        violations.append(f"weight {a[l, k]:.6g} on non-edge (l={l}, k={k})")
    for l, k in zip(*np.nonzero((a < 0) | (a > 1))):
        violations.append(f"weight {a[l, k]:.6g} outside [0, 1] at (l={l}, k={k})")
    sums = a.sum(axis=0)
    for k in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
        violations.append(f"column {k} sums to {sums[k]:.15g}, expected 1")
    return violations
