"""Deterministic DAG environments: the hypergrid and a prepend/append sequence MDP.

Both environments expose the same surface: integer-indexed actions, boolean
action masks, ``step``, parent-edge enumeration, terminal rewards, one-hot
state encodings, and exhaustive terminal enumeration for the oracles.  The
backward "action" space mirrors the forward one: the backward slot of an
edge is the forward action that created it.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    OracleUnavailableError,
    TableParseError,
    UsageError,
)

GridState = tuple[int, ...]
SeqState = str

DEFAULT_ENUM_CAP = 10_000_000

# Lookup floor that keeps sequence rewards strictly positive before the
# exponent is applied.
SEQ_REWARD_FLOOR = 1e-6


@dataclass(frozen=True)
class HypergridEnv:
    """D-dimensional grid of horizon H: D increment actions plus a stop action.

    The terminal reward is r0 plus r1 when every coordinate sits in the outer
    band |x/(H-1) - 0.5| in (0.25, 0.5], plus r2 when every coordinate sits in
    the inner band (0.3, 0.4].  Band membership is evaluated in exact integer
    arithmetic so the half-open endpoints behave as written.
    """

    dims: int
    horizon: int
    r0: float
    r1: float = 0.5
    r2: float = 2.0

    def __post_init__(self):
        if self.dims < 1:
            raise ConfigError(f"dims must be >= 1, got {self.dims}")
        if self.horizon < 2:
            raise ConfigError(f"horizon must be >= 2, got {self.horizon}")
        if min(self.r0, self.r1, self.r2) < 0:
            raise ConfigError("reward parameters must be nonnegative")

    # -- shared environment surface -------------------------------------
    @property
    def n_actions(self) -> int:
        return self.dims + 1

    @property
    def stop_action(self) -> int:
        return self.dims

    @property
    def encode_dim(self) -> int:
        return self.dims * self.horizon

    @property
    def state_count(self) -> int:
        return self.horizon ** self.dims

    @property
    def terminal_count(self) -> int:
        return self.state_count

    @property
    def max_traj_len(self) -> int:
        return self.dims * (self.horizon - 1) + 1

    def initial_state(self) -> GridState:
        return (0,) * self.dims

    def _check_state(self, s: GridState) -> None:
        if len(s) != self.dims or any(not 0 <= c < self.horizon for c in s):
            raise UsageError(f"state {s} outside the {self.dims}-dim horizon-{self.horizon} grid")

    def allowed_actions(self, s: GridState) -> np.ndarray:
        """Mask over actions: increment d allowed iff below the edge; stop always."""
        self._check_state(s)
        mask = np.zeros(self.n_actions, dtype=bool)
        for d, c in enumerate(s):
            mask[d] = c < self.horizon - 1
        mask[self.stop_action] = True
        return mask

    def step(self, s: GridState, a: int) -> tuple[GridState, bool]:
        """Apply action ``a``; returns (next state, done).  Stop emits x = s."""
        mask = self.allowed_actions(s)
        if not 0 <= a < self.n_actions or not mask[a]:
            raise UsageError(f"action {a} not allowed at state {s}")
        if a == self.stop_action:
            return s, True
        nxt = list(s)
        nxt[a] += 1
        return tuple(nxt), False

    def parents(self, s: GridState) -> list[tuple[GridState, int]]:
        """Interior parent edges (parent, action); the root has none."""
        self._check_state(s)
        out = []
        for d, c in enumerate(s):
            if c > 0:
                parent = list(s)
                parent[d] -= 1
                out.append((tuple(parent), d))
        return out

    def is_terminal(self, s: GridState) -> bool:
        # Grid states only terminate via the stop action.
        return False

    def reward(self, x: GridState) -> float:
        self._check_state(x)
        h = self.horizon - 1
        in_outer = True
        in_inner = True
        for c in x:
            m = abs(2 * c - h)  # |x/(H-1) - 0.5| == m / (2h)
            in_outer = in_outer and (h < 2 * m <= 2 * h)
            in_inner = in_inner and (3 * h < 5 * m <= 4 * h)
        return self.r0 + self.r1 * in_outer + self.r2 * in_inner

    def reward_batch(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized reward over an (n, D) integer coordinate array."""
        h = self.horizon - 1
        m = np.abs(2 * coords - h)
        outer = ((h < 2 * m) & (2 * m <= 2 * h)).all(axis=1)
        inner = ((3 * h < 5 * m) & (5 * m <= 4 * h)).all(axis=1)
        return self.r0 + self.r1 * outer + self.r2 * inner

    def encode_state(self, s: GridState) -> np.ndarray:
        """Concatenated one-hot encoding, one block of width H per dimension."""
        v = np.zeros(self.encode_dim)
        for d, c in enumerate(s):
            v[d * self.horizon + c] = 1.0
        return v

    def encode_batch(self, coords: np.ndarray) -> np.ndarray:
        n = coords.shape[0]
        v = np.zeros((n, self.encode_dim))
        rows = np.arange(n)
        for d in range(self.dims):
            v[rows, d * self.horizon + coords[:, d]] = 1.0
        return v

    def decode_state(self, v: np.ndarray) -> GridState:
        blocks = np.asarray(v).reshape(self.dims, self.horizon)
        return tuple(int(np.argmax(b)) for b in blocks)

    def enumerate_terminals(self, cap: int = DEFAULT_ENUM_CAP) -> Iterator[GridState]:
        """Every terminal state exactly once, in lexicographic order."""
        if self.terminal_count > cap:
            raise OracleUnavailableError(
                f"{self.terminal_count} terminal states exceed the cap {cap}"
            )
        return itertools.product(range(self.horizon), repeat=self.dims)

    # -- mode bookkeeping -------------------------------------------------
    def band_coords(self) -> tuple[list[int], list[int]]:
        """Per-dimension coordinates inside the outer and inner reward bands."""
        h = self.horizon - 1
        outer = [c for c in range(self.horizon) if h < 2 * abs(2 * c - h) <= 2 * h]
        inner = [c for c in range(self.horizon) if 3 * h < 5 * abs(2 * c - h) <= 4 * h]
        return outer, inner

    def mode_set(self, cap: int = DEFAULT_ENUM_CAP) -> set[GridState]:
        """All terminal states achieving the maximal reward."""
        outer, inner = self.band_coords()
        if self.r2 > 0 and inner:
            per_dim = inner
        elif self.r1 > 0:
            per_dim = outer
        else:
            # Constant reward: every state ties at the maximum.
            return set(self.enumerate_terminals(cap))
        if len(per_dim) ** self.dims > cap:
            raise OracleUnavailableError("mode set exceeds the enumeration cap")
        return set(itertools.product(per_dim, repeat=self.dims))

    def region_of(self, x: GridState) -> tuple[bool, ...]:
        """Which of the 2^D corners a state belongs to (True = high side)."""
        return tuple(2 * c > self.horizon - 1 for c in x)


@dataclass(frozen=True, eq=False)
class SeqEnv:
    """Fixed-length string builder whose actions prepend or append a token.

    Action ``t`` prepends token ``t``; action ``n_tokens + t`` appends it.
    A trajectory terminates after exactly ``length`` steps; there is no stop
    action.  Rewards come from a user-supplied table of complete strings,
    floored at a small positive value and raised to the exponent ``beta``.
    """

    alphabet: tuple[str, ...]
    length: int
    reward_table: Mapping[str, float]
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        if not self.alphabet:
            raise ConfigError("alphabet must not be empty")
        if any(len(t) != 1 for t in self.alphabet):
            raise ConfigError("alphabet tokens must be single characters")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ConfigError("alphabet tokens must be distinct")
        if self.length < 1:
            raise ConfigError(f"sequence length must be >= 1, got {self.length}")
        if self.beta < 0:
            raise ConfigError(f"reward exponent must be >= 0, got {self.beta}")
        object.__setattr__(self, "_token_index", {t: i for i, t in enumerate(self.alphabet)})

    # -- shared environment surface -------------------------------------
    @property
    def n_tokens(self) -> int:
        return len(self.alphabet)

    @property
    def n_actions(self) -> int:
        return 2 * self.n_tokens

    @property
    def stop_action(self) -> None:
        return None

    @property
    def encode_dim(self) -> int:
        return self.length * (self.n_tokens + 1)

    @property
    def state_count(self) -> int:
        n = self.n_tokens
        if n == 1:
            return self.length + 1
        return (n ** (self.length + 1) - 1) // (n - 1)

    @property
    def terminal_count(self) -> int:
        return self.n_tokens ** self.length

    @property
    def max_traj_len(self) -> int:
        return self.length

    def initial_state(self) -> SeqState:
        return ""

    def _check_state(self, s: SeqState) -> None:
        if len(s) > self.length or any(t not in self._token_index for t in s):
            raise UsageError(f"state {s!r} is not a valid buffer for this alphabet/length")

    def is_terminal(self, s: SeqState) -> bool:
        self._check_state(s)
        return len(s) == self.length

    def allowed_actions(self, s: SeqState) -> np.ndarray:
        self._check_state(s)
        if len(s) == self.length:
            raise UsageError("allowed_actions called on a terminal sequence state")
        return np.ones(self.n_actions, dtype=bool)

    def prepend_action(self, token: str) -> int:
        return self._token_index[token]

    def append_action(self, token: str) -> int:
        return self.n_tokens + self._token_index[token]

    def step(self, s: SeqState, a: int) -> tuple[SeqState, bool]:
        mask = self.allowed_actions(s)
        if not 0 <= a < self.n_actions or not mask[a]:
            raise UsageError(f"action {a} not allowed at state {s!r}")
        if a < self.n_tokens:
            nxt = self.alphabet[a] + s
        else:
            nxt = s + self.alphabet[a - self.n_tokens]
        return nxt, len(nxt) == self.length

    def parents(self, s: SeqState) -> list[tuple[SeqState, int]]:
        """Up to two parent edges: drop-first (via prepend) and drop-last (via append).

        Both edges are listed even when they reach the same parent state.
        """
        self._check_state(s)
        if not s:
            return []
        return [
            (s[1:], self.prepend_action(s[0])),
            (s[:-1], self.append_action(s[-1])),
        ]

    def reward(self, x: SeqState) -> float:
        self._check_state(x)
        if len(x) != self.length:
            raise UsageError(f"reward queried on incomplete sequence {x!r}")
        try:
            raw = self.reward_table[x]
        except KeyError:
            raise DataError(f"reward table has no entry for sequence {x!r}") from None
        return max(float(raw), SEQ_REWARD_FLOOR) ** self.beta

    def encode_state(self, s: SeqState) -> np.ndarray:
        """length slots, each one-hot over (tokens + empty); empty marks unused slots."""
        width = self.n_tokens + 1
        v = np.zeros(self.encode_dim)
        for i in range(self.length):
            if i < len(s):
                v[i * width + self._token_index[s[i]]] = 1.0
            else:
                v[i * width + self.n_tokens] = 1.0
        return v

    def encode_batch(self, states: list[SeqState]) -> np.ndarray:
        return np.stack([self.encode_state(s) for s in states])

    def decode_state(self, v: np.ndarray) -> SeqState:
        width = self.n_tokens + 1
        slots = np.asarray(v).reshape(self.length, width)
        chars = []
        for slot in slots:
            idx = int(np.argmax(slot))
            if idx == self.n_tokens:
                break
            chars.append(self.alphabet[idx])
        return "".join(chars)

    def enumerate_terminals(self, cap: int = DEFAULT_ENUM_CAP) -> Iterator[SeqState]:
        if self.terminal_count > cap:
            raise OracleUnavailableError(
                f"{self.terminal_count} terminal states exceed the cap {cap}"
            )
        return ("".join(p) for p in itertools.product(self.alphabet, repeat=self.length))

    def mode_set(self, cap: int = DEFAULT_ENUM_CAP, tol: float = 0.0) -> set[SeqState]:
        """Terminal states within (1 - tol) of the maximal effective reward."""
        rewards = {x: self.reward(x) for x in self.enumerate_terminals(cap)}
        best = max(rewards.values())
        return {x for x, r in rewards.items() if r >= best * (1.0 - tol)}

    def region_of(self, x: SeqState) -> SeqState:
        # Regions are a grid concept; each sequence mode is its own region.
        return x


Env = HypergridEnv | SeqEnv


def load_reward_table(path: str) -> dict[str, float]:
    """Parse a ``sequence,reward`` CSV into a dict; header row optional.

    Malformed rows raise TableParseError with the line number; duplicate
    sequences keep the last value and emit a warning.
    """
    table: dict[str, float] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise TableParseError(f"cannot read reward table {path}: {exc}", None) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TableParseError(
                    f"{path}:{lineno}: expected 'sequence,reward', got {line!r}", lineno
                )
            seq, val = parts[0].strip(), parts[1].strip()
            try:
                reward = float(val)
            except ValueError:
                if lineno == 1 and not table:
                    continue  # header row
                raise TableParseError(
                    f"{path}:{lineno}: reward {val!r} is not a number", lineno
                ) from None
            if seq in table:
                warnings.warn(f"{path}:{lineno}: duplicate sequence {seq!r}; last value wins")
            table[seq] = reward
    if not table:
        raise TableParseError(f"{path}: no data rows", None)
    return table
