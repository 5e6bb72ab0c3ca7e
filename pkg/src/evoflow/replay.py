"""Prioritized trajectory replay: worst-reward-first eviction, stratified sampling.

The buffer keeps at most ``capacity`` trajectories.  Once full, a new entry
replaces the current minimum-reward entry only if it beats that minimum;
otherwise it is rejected, which preserves the buffer's best content.  A
sampled batch draws a fixed share from the priority stratum (entries at or
above the ``priority_percentile``-th reward percentile, recomputed against
the live buffer on every call) and the rest from the remainder.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import Trajectory
from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 1000
    priority_percentile: float = 80.0
    priority_split: float = 0.5

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if not 0.0 < self.priority_percentile < 100.0:
            raise ConfigError("priority_percentile must lie in (0, 100)")
        if not 0.0 < self.priority_split < 1.0:
            raise ConfigError("priority_split must lie in (0, 1)")


@dataclass(frozen=True)
class ReplayEntry:
    trajectory: Trajectory
    reward: float
    insert_seq: int


class ReplayBuffer:
    def __init__(self, config: ReplayConfig | None = None):
        self.config = config or ReplayConfig()
        self._entries: list[ReplayEntry] = []
        self._rewards: list[float] = []
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[ReplayEntry, ...]:
        return tuple(self._entries)

    def rewards(self) -> np.ndarray:
        return np.asarray(self._rewards)

    def insert(self, trajectory: Trajectory) -> ReplayEntry | None:
        """Add a trajectory; returns the evicted entry, if any.

        A full buffer evicts its minimum-reward entry (oldest first on ties)
        only when the newcomer's reward beats that minimum; otherwise the
        newcomer is dropped.
        """
        entry = ReplayEntry(trajectory, float(trajectory.reward), self._next_seq)
        self._next_seq += 1
        if len(self._entries) < self.config.capacity:
            self._entries.append(entry)
            self._rewards.append(entry.reward)
            return None
        worst = min(range(len(self._entries)),
                    key=lambda i: (self._rewards[i], self._entries[i].insert_seq))
        if entry.reward <= self._rewards[worst]:
            return None
        evicted = self._entries[worst]
        self._entries[worst] = entry
        self._rewards[worst] = entry.reward
        return evicted

    def _priority_mask(self) -> np.ndarray:
        rewards = np.asarray(self._rewards)
        cutoff = np.percentile(rewards, self.config.priority_percentile)
        return rewards >= cutoff

    def sample(self, n: int, rng: np.random.Generator) -> list[Trajectory]:
        """Draw ``n`` trajectories: ceil(split*n) from the priority stratum,
        the rest uniformly from the remainder, both with replacement.  An
        empty stratum routes the whole batch to the other one.
        """
        if not self._entries:
            raise UsageError("cannot sample from an empty replay buffer")
        if n < 1:
            raise UsageError(f"batch size must be >= 1, got {n}")
        mask = self._priority_mask()
        priority = np.flatnonzero(mask)
        rest = np.flatnonzero(~mask)
        n_priority = int(np.ceil(self.config.priority_split * n - 1e-9))
        if rest.size == 0:
            n_priority = n
        elif priority.size == 0:
            n_priority = 0
        picks: list[int] = []
        if n_priority:
            picks.extend(priority[rng.integers(0, priority.size, size=n_priority)])
        if n - n_priority:
            picks.extend(rest[rng.integers(0, rest.size, size=n - n_priority)])
        return [self._entries[i].trajectory for i in picks]

    def snapshot_lines(self) -> list[str]:
        """One record per entry: space-separated actions, a tab, the reward."""
        return [
            " ".join(str(a) for a in e.trajectory.actions) + "\t" + repr(e.reward)
            for e in self._entries
        ]

    def save_snapshot(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.snapshot_lines():
                fh.write(line + "\n")
