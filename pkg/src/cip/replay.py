from __future__ import annotations

import numpy as np

from .envs import TransitionBatch


class ReplayBuffer:
    """FIFO ring of transitions with a per-entry synthetic flag.

    ``added`` counts every insertion ever made, so ``since(mark)`` can return
    the entries inserted after an earlier value of ``added``.
    """

    def __init__(self, capacity: int, d_S: int, d_A: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, d_S))
        self.a = np.zeros((capacity, d_A))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, d_S))
        self.done = np.zeros(capacity, dtype=bool)
        self.synthetic = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.added = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s_next, done, synthetic: bool = False) -> None:
        i = self.added % self.capacity
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = done
        self.synthetic[i] = synthetic
        self.added += 1
        self.size = min(self.size + 1, self.capacity)

    def add_batch(self, batch: TransitionBatch) -> None:
        for k in range(len(batch)):
            self.add(batch.s[k], batch.a[k], batch.r[k], batch.s_next[k], batch.done[k],
                     batch.synthetic[k])

    def _take(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
                               self.done[idx], self.synthetic[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self._take(rng.integers(0, self.size, batch_size))

    def _ring_index(self, first_abs: int) -> np.ndarray:
        first_abs = max(first_abs, self.added - self.size)
        return np.arange(first_abs, self.added) % self.capacity

    def recent(self, n: int) -> TransitionBatch:
        """The ``n`` most recent entries in insertion order."""
        return self._take(self._ring_index(self.added - n))

    def since(self, mark: int) -> TransitionBatch:
        return self._take(self._ring_index(mark))

    def all(self) -> TransitionBatch:
        return self._take(self._ring_index(0))

    def synthetic_fraction(self) -> float:
        return float(self.synthetic[: self.size].mean()) if self.size else 0.0
