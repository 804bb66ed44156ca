"""
Entry-selection schedules for partial diffusion.

The ``M`` entries are split into contiguous blocks of at most ``L`` entries.
At every iteration a node transmits exactly one block: the sequential scheme
cycles through them, the stochastic scheme samples one uniformly.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError


class Scheme(str, enum.Enum):
    SEQUENTIAL = "sequential"
    STOCHASTIC = "stochastic"


class Coupling(str, enum.Enum):
    SHARED = "shared"            # every node uses the same block
    INDEPENDENT = "independent"  # per-node block (staggered phase / own draw)


def default_coupling(scheme):
    return Coupling.SHARED if Scheme(scheme) is Scheme.SEQUENTIAL else Coupling.INDEPENDENT


def build_partition(param_dim, entries_per_iter):
    """
    Contiguous blocks ``J_r = {(r-1)L, ..., min(rL, M) - 1}`` (0-based).

    ``L = 0`` gives a single empty block, i.e. nothing is ever transmitted.
    """
    m, l = int(param_dim), int(entries_per_iter)
    if m < 1:
        raise InvalidConfigError("param_dim must be positive")
    if not 0 <= l <= m:
        raise InvalidConfigError(f"entries_per_iter must be in [0, {m}], got {l}")
    if l == 0:
        return ((),)
    return tuple(tuple(range(s, min(s + l, m))) for s in range(0, m, l))


@dataclass(frozen=True)
class SelectionSchedule:
    scheme: Scheme
    param_dim: int
    entries_per_iter: int
    coupling: Coupling = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        coupling = default_coupling(self.scheme) if self.coupling is None else Coupling(self.coupling)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "_partition",
                           build_partition(self.param_dim, self.entries_per_iter))
        masks = np.zeros((len(self._partition), self.param_dim), dtype=bool)
        for r, block in enumerate(self._partition):
            masks[r, list(block)] = True
        masks.setflags(write=False)
        object.__setattr__(self, "_masks", masks)

    @property
    def partition(self):
        return self._partition

    @property
    def num_subsets(self):
        """``ceil(M / L)``; 1 for the degenerate ``L = 0`` schedule."""
        return len(self._partition)

    @property
    def masks(self):
        """Boolean ``(num_subsets, M)`` array; row ``r`` marks block ``r``."""
        return self._masks

    def phase(self, iteration, node):
        """Active block index of the sequential scheme."""
        shift = node if self.coupling is Coupling.INDEPENDENT else 0
        return (iteration + shift) % self.num_subsets

    def block_indices(self, iterations, num_nodes, rng=None):
        """
        Active block index at each of ``iterations`` for every node.

        Returns an int array of shape ``(len(iterations), num_nodes)``. ``rng``
        is only consumed by the stochastic scheme, which ignores the
        iteration values themselves.
        """
        iterations = np.asarray(iterations, dtype=np.intp)
        count, b = len(iterations), self.num_subsets
        if self.scheme is Scheme.SEQUENTIAL:
            shift = np.arange(num_nodes) if self.coupling is Coupling.INDEPENDENT else np.zeros(num_nodes, np.intp)
            return (iterations[:, None] + shift[None, :]) % b
        if self.coupling is Coupling.SHARED:
            idx = rng.integers(b, size=(count, 1))
            return np.repeat(idx, num_nodes, axis=1).astype(np.intp)
        return rng.integers(b, size=(count, num_nodes)).astype(np.intp)

    def to_dict(self):
        return {"scheme": self.scheme.value, "param_dim": self.param_dim,
                "entries_per_iter": self.entries_per_iter, "coupling": self.coupling.value}


def select(schedule, iteration, node, rng=None):
    """
    Diagonal of the selection matrix of ``node`` at ``iteration``.

    The sequential scheme is deterministic and ignores ``rng``. The stochastic
    scheme draws one block uniformly from ``rng``; with shared coupling the
    caller must reuse the same draw for every node (see
    :meth:`SelectionSchedule.block_indices`).
    """
    if schedule.scheme is Scheme.SEQUENTIAL:
        r = schedule.phase(iteration, node)
    else:
        r = int(rng.integers(schedule.num_subsets))
    return schedule.masks[r].copy()


def transmission_probability(entries_per_iter, param_dim):
    if param_dim < 1 or not 0 <= entries_per_iter <= param_dim:
        raise InvalidConfigError("need 0 <= L <= M and M >= 1")
    return entries_per_iter / param_dim


def expected_selection(schedule):
    """Diagonal of ``E[Lambda]``: membership count of each entry over ``num_subsets``."""
    return schedule.masks.sum(axis=0) / schedule.num_subsets


def joint_support(schedule, num_nodes):
    """
    Enumerate the per-iteration joint selection of all nodes.

    Yields ``(probability, block_indices)`` pairs where ``block_indices`` has
    one entry per node. Sequential schedules are averaged over one cycle.
    """
    b = schedule.num_subsets
    if schedule.scheme is Scheme.SEQUENTIAL or schedule.coupling is Coupling.SHARED:
        for r in range(b):
            if schedule.scheme is Scheme.SEQUENTIAL:
                idx = [schedule.phase(r, k) for k in range(num_nodes)]
            else:
                idx = [r] * num_nodes
            yield 1.0 / b, np.array(idx, dtype=np.intp)
        return
    p = 1.0 / b ** num_nodes
    for combo in itertools.product(range(b), repeat=num_nodes):
        yield p, np.array(combo, dtype=np.intp)


def joint_support_size(schedule, num_nodes):
    b = schedule.num_subsets
    if schedule.scheme is Scheme.SEQUENTIAL or schedule.coupling is Coupling.SHARED:
        return b
    return b ** num_nodes

