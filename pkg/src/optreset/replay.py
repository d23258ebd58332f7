"""Experience storage and the target/online parameter pair.

The buffer is a fixed-capacity FIFO ring; sampling is uniform with
replacement from whatever is currently stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import MlpDef, forward


@dataclass(eq=False)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer: inserting beyond capacity evicts the oldest item."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> list[Transition]:
        """Current contents, oldest first."""
        return self._items[self._next :] + self._items[: self._next]


def sample_batch(
    buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator
) -> list[Transition]:
    """Uniform sample with replacement."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if len(buffer) == 0:
        raise ValueError("cannot sample from an empty buffer")
    idx = rng.integers(0, len(buffer), size=batch_size)
    return [buffer._items[j] for j in idx]


@dataclass
class AgentParams:
    """theta: target parameters, frozen within an iteration.
    w: online parameters, moved by the optimizer."""

    theta: np.ndarray
    w: np.ndarray


def sync_target(agent: AgentParams) -> AgentParams:
    """theta becomes a deep copy of w; w is untouched."""
    return AgentParams(theta=agent.w.copy(), w=agent.w)


def bellman_target(
    mlp: MlpDef, theta: np.ndarray, transition: Transition, gamma: float
) -> float:
    """Bootstrapped regression target for one transition.

    r for terminal transitions, else r + gamma * max_a' q(s'; theta).
    A function of theta only; the online parameters never enter.
    """
    if transition.terminal:
        return float(transition.r)
    return float(transition.r + gamma * forward(mlp, theta, transition.s_next).max())
