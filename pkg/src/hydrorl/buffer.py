"""Sum-tree backed replay store with proportional sampling."""

import numpy as np

from ._validation import InvalidInputError
from .data import SampleBatch


class SumTree:
    """Binary tree of partial sums over ``capacity`` non-negative leaves.

    Stored as a flat array with the root at index 1 and leaves at
    ``[size, 2 * size)`` where ``size`` is ``capacity`` rounded up to a power
    of two. Parents are recomputed from their children on every update, so
    the root equals the leaf sum up to a single pass of rounding.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise InvalidInputError("capacity must be positive")
        self.capacity = int(capacity)
        self._size = 1 << max(0, (self.capacity - 1).bit_length())
        self.tree = np.zeros(2 * self._size)

    @property
    def total(self):
        return float(self.tree[1])

    def leaves(self):
        return self.tree[self._size:self._size + self.capacity]

    def update(self, indices, values):
        indices = np.atleast_1d(np.asarray(indices, dtype=int))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if np.any(values < 0):
            raise InvalidInputError("priorities must be non-negative")
        nodes = indices + self._size
        self.tree[nodes] = values
        nodes = np.unique(nodes // 2)
        while nodes.size and nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes // 2)

    def find(self, u):
        """Leaf indices whose cumulative-sum interval contains each ``u``."""
        u = np.array(u, dtype=float, ndmin=1)
        idx = np.ones(u.shape, dtype=int)
        while idx[0] < self._size:
            left = 2 * idx
            go_left = u < self.tree[left]
            u = np.where(go_left, u, u - self.tree[left])
            idx = np.where(go_left, left, left + 1)
        leaf = idx - self._size
        bad = (leaf >= self.capacity) | (self.tree[idx] <= 0)
        if np.any(bad):
            # rounding pushed u past the last positive leaf
            positive = np.flatnonzero(self.leaves() > 0)
            leaf[bad] = positive[-1]
        return leaf


class PriorityBuffer:
    """FIFO-evicting store of source transitions with priorities and
    uncertainty values.

    Every slot carries a global insertion id so that priority updates for
    entries evicted since they were sampled can be detected and skipped.
    """

    def __init__(self, capacity=100_000):
        self.capacity = int(capacity)
        self.tree = SumTree(self.capacity)
        self.s = np.zeros(self.capacity, dtype=int)
        self.a = np.zeros(self.capacity, dtype=int)
        self.r = np.zeros(self.capacity)
        self.s_next = np.zeros(self.capacity, dtype=int)
        self.u = np.zeros(self.capacity)
        self.ids = np.full(self.capacity, -1, dtype=np.int64)
        self.n_inserted = 0

    def __len__(self):
        return min(self.n_inserted, self.capacity)

    @property
    def priorities(self):
        return self.tree.leaves()[:len(self)]

    def insert(self, s, a, r, s_next, priority, u):
        if not priority > 0:
            raise InvalidInputError("priorities must be positive")
        pos = self.n_inserted % self.capacity
        self.s[pos], self.a[pos], self.r[pos], self.s_next[pos] = s, a, r, s_next
        self.u[pos] = u
        self.ids[pos] = self.n_inserted
        self.tree.update(pos, priority)
        self.n_inserted += 1
        return pos

    def probabilities(self):
        p = self.priorities
        return p / p.sum()

    def sample_positions(self, n, rng, uniform=False):
        if len(self) == 0:
            return np.zeros(0, dtype=int)
        if uniform:
            return rng.integers(len(self), size=n)
        return self.tree.find(rng.random(n) * self.tree.total)

    def batch(self, positions):
        positions = np.asarray(positions, dtype=int)
        return SampleBatch(self.s[positions], self.a[positions], self.r[positions],
                           self.s_next[positions])

    def update_priorities(self, positions, ids, priorities):
        """Set new priorities; entries whose id changed are skipped.

        Returns the number of stale entries skipped.
        """
        positions = np.asarray(positions, dtype=int)
        live = self.ids[positions] == np.asarray(ids)
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities[live] <= 0):
            raise InvalidInputError("priorities must be positive")
        self.tree.update(positions[live], priorities[live])
        return int(np.count_nonzero(~live))
