"""Domain records shared across modules: states, actions, transitions, replay storage."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

STATE_DIM = 4
ACTION_LOW = -10.0
ACTION_HIGH = 10.0


def as_state(values):
    """Validate and copy a cart-pole state (x, x_dot, theta, theta_dot)."""
    s = np.array(values, dtype=np.float64).reshape(-1)
    if s.shape != (STATE_DIM,):
        raise ValueError(f"state must have length {STATE_DIM}, got {s.shape[0]}")
    if not np.all(np.isfinite(s)):
        raise ValueError(f"state has non-finite entries: {s}")
    return s


def clamp_action(force):
    return float(min(max(float(force), ACTION_LOW), ACTION_HIGH))


class Transition(NamedTuple):
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray


@dataclass
class SubDataset:
    """Column view of a set of transitions (one bootstrap draw, or a minibatch)."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def take(self, idx):
        return SubDataset(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])


class ReplayBuffer:
    """FIFO transition store with fixed capacity."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._s = np.zeros((self.capacity, STATE_DIM))
        self._a = np.zeros(self.capacity)
        self._r = np.zeros(self.capacity)
        self._s2 = np.zeros((self.capacity, STATE_DIM))
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state):
        i = self._next
        self._s[i] = state
        self._a[i] = action
        self._r[i] = reward
        self._s2[i] = next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def view(self):
        """All stored transitions, oldest first."""
        return SubDataset(self._s, self._a, self._r, self._s2).take(self._order())

    def __getitem__(self, i):
        j = self._order()[i]
        return Transition(self._s[j].copy(), float(self._a[j]), float(self._r[j]), self._s2[j].copy())

    def __iter__(self):
        for i in range(self._size):
            yield self[i]


@dataclass
class UDUCSampleSet:
    """Contrastive set for one (s, a): the true next state plus target-model samples.

    Arrays may carry a leading batch axis: ``positive`` (n, 4), ``negatives``
    (n, k, 4), ``state`` (n, 4), ``action`` (n,). Samples are materialised
    constants; nothing here refers back to the networks that drew them.
    """
    positive: np.ndarray
    negatives: np.ndarray
    state: np.ndarray
    action: np.ndarray

    def __len__(self):
        """|X|: the positive plus the negatives."""
        return 1 + np.asarray(self.negatives).shape[-2]

    @property
    def batched(self):
        return np.asarray(self.positive).ndim == 2

    def all_samples(self):
        """Positive first, then negatives, stacked on the set axis."""
        pos = np.asarray(self.positive)[..., None, :]
        return np.concatenate([pos, np.asarray(self.negatives).reshape(*pos.shape[:-2], -1, STATE_DIM)], axis=-2)

    def take(self, idx):
        return UDUCSampleSet(self.positive[idx], self.negatives[idx], self.state[idx], self.action[idx])
