"""Brute-force ground truth: exact densities, exact flows, and evaluation metrics.

Everything here is exhaustive dynamic programming over the full state DAG,
gated by an enumeration cap.  The exact flows provide zero-loss reference
parameterizations for all three training objectives; the exact learned
density turns a policy into its terminal-state marginal without sampling.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .agent import GfnAgent
from .envs import DEFAULT_ENUM_CAP, Env, HypergridEnv, SeqEnv
from .errors import OracleUnavailableError

LOG_FLOOR = 1e-30  # clamp below before taking log of a reward


@dataclass
class DensityTable:
    """Probability per terminal state plus the normalizer it came from."""

    probs: dict[object, float]
    z: float

    def check(self, tol: float = 1e-9) -> None:
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > tol or min(self.probs.values(), default=0.0) < 0.0:
            raise AssertionError(f"density table sums to {total}, has min "
                                 f"{min(self.probs.values(), default=0.0)}")


@dataclass
class FlowTable:
    """Exact edge and state flows satisfying the flow-balance criterion.

    Stop edges (grid) are stored explicitly with flow R(x).  Every state's
    in-flow is split equally among its parent edges, which is the canonical
    uniform-backward construction: any valid flow works for the zero-loss
    tests, this one is deterministic.
    """

    edge_flows: dict[tuple[object, int], float]
    state_flows: dict[object, float]
    total_flow: float

    def balance_residual(self, env: Env) -> float:
        """Max |in-flow - out-flow| over interior states; should be ~1e-16."""
        out_by_state: dict[object, list[float]] = {}
        for (src, _), v in self.edge_flows.items():
            out_by_state.setdefault(src, []).append(v)
        worst = 0.0
        for s, f in self.state_flows.items():
            parents = env.parents(s)
            if parents:
                inflow = math.fsum(self.edge_flows[(p, a)] for p, a in parents)
                worst = max(worst, abs(inflow - f))
            out = out_by_state.get(s)
            if out is not None:
                worst = max(worst, abs(math.fsum(out) - f))
        return worst


def _check_cap(n: int, cap: int, what: str) -> None:
    if n > cap:
        raise OracleUnavailableError(f"{n} {what} exceed the enumeration cap {cap}")


def true_density(env: Env, cap: int = DEFAULT_ENUM_CAP) -> DensityTable:
    """Target distribution: reward over the sum of all terminal rewards."""
    rewards = {x: env.reward(x) for x in env.enumerate_terminals(cap)}
    z = math.fsum(rewards.values())
    return DensityTable({x: r / z for x, r in rewards.items()}, z)


# ---------------------------------------------------------------------------
# Exact learned density: forward DP over the DAG in topological order.
# ---------------------------------------------------------------------------

def exact_learned_density(agent: GfnAgent, env: Env, cap: int = DEFAULT_ENUM_CAP,
                          chunk: int = 65536) -> DensityTable:
    """Exact terminal marginal of the agent's forward policy (no sampling)."""
    _check_cap(env.state_count, cap, "states")
    if isinstance(env, HypergridEnv):
        return _grid_learned_density(agent, env, chunk)
    return _seq_learned_density(agent, env)


def _forward_probs_rows(agent: GfnAgent, inputs: np.ndarray, masks: np.ndarray,
                        chunk: int) -> np.ndarray:
    """Masked softmax of the forward head for a block of encoded states."""
    n = inputs.shape[0]
    probs = np.zeros((n, agent.n_actions))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        logits, _ = agent.logits_batch(inputs[lo:hi])
        z = np.where(masks[lo:hi], logits[:, agent.forward_slice], -np.inf)
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        probs[lo:hi] = e / e.sum(axis=1, keepdims=True)
    return probs


def _grid_learned_density(agent: GfnAgent, env: HypergridEnv, chunk: int) -> DensityTable:
    d, h = env.dims, env.horizon
    n = env.state_count
    coords = np.stack(
        np.meshgrid(*[np.arange(h)] * d, indexing="ij"), axis=-1
    ).reshape(n, d)
    strides = np.array([h ** (d - 1 - i) for i in range(d)])
    sums = coords.sum(axis=1)
    masks = np.concatenate([coords < h - 1, np.ones((n, 1), dtype=bool)], axis=1)

    mass = np.zeros(n)
    mass[0] = 1.0  # all-zeros state is index 0
    pi = np.zeros(n)
    for level in range(0, d * (h - 1) + 1):
        sel = np.flatnonzero(sums == level)
        probs = _forward_probs_rows(agent, env.encode_batch(coords[sel]), masks[sel], chunk)
        pi[sel] = mass[sel] * probs[:, env.stop_action]
        for dim in range(d):
            movable = masks[sel, dim]
            src = sel[movable]
            # targets are distinct within one dimension, so a fancy add is safe
            mass[src + strides[dim]] += mass[src] * probs[movable, dim]
    table = {tuple(int(c) for c in coords[i]): float(pi[i]) for i in range(n)}
    return DensityTable(table, 1.0)


def _seq_learned_density(agent: GfnAgent, env: SeqEnv) -> DensityTable:
    mass: dict[str, float] = {"": 1.0}
    for _ in range(env.length):
        nxt: dict[str, float] = {}
        states = sorted(mass)
        inputs = env.encode_batch(states)
        masks = np.ones((len(states), env.n_actions), dtype=bool)
        probs = _forward_probs_rows(agent, inputs, masks, chunk=65536)
        for i, s in enumerate(states):
            for a in range(env.n_actions):
                child, _ = env.step(s, a)
                nxt[child] = nxt.get(child, 0.0) + mass[s] * float(probs[i, a])
        mass = nxt
    return DensityTable(mass, 1.0)


# ---------------------------------------------------------------------------
# Exact flows: backward DP from the terminals.
# ---------------------------------------------------------------------------

def exact_edge_flows(env: Env, cap: int = DEFAULT_ENUM_CAP) -> FlowTable:
    """Edge/state flows with terminal out-flow R(x), in-flow split uniformly."""
    _check_cap(env.state_count, cap, "states")
    if isinstance(env, HypergridEnv):
        states = sorted(env.enumerate_terminals(cap), key=lambda s: (sum(s), s))
    else:
        states = sorted(_all_seq_states(env), key=lambda s: (len(s), s))
    edge: dict[tuple[object, int], float] = {}
    flow: dict[object, float] = {}
    n_parents = {s: max(len(env.parents(s)), 1) for s in states}
    for s in reversed(states):
        if isinstance(env, HypergridEnv):
            out = env.reward(s)
            edge[(s, env.stop_action)] = out
            for a in np.flatnonzero(env.allowed_actions(s)):
                a = int(a)
                if a == env.stop_action:
                    continue
                child, _ = env.step(s, a)
                f = flow[child] / n_parents[child]
                edge[(s, a)] = f
                out += f
            flow[s] = out
        else:
            if env.is_terminal(s):
                flow[s] = env.reward(s)
                continue
            out = 0.0
            for a in range(env.n_actions):
                child, _ = env.step(s, a)
                f = flow[child] / n_parents[child]
                edge[(s, a)] = f
                out += f
            flow[s] = out
    return FlowTable(edge, flow, flow[env.initial_state()])


def _all_seq_states(env: SeqEnv) -> Iterable[str]:
    for length in range(env.length + 1):
        for p in itertools.product(env.alphabet, repeat=length):
            yield "".join(p)


class OracleFlowView:
    """Exact-flow parameterization exposing the same surface the losses read.

    Plugging this view into any of the three loss functions must give zero
    loss; that test pins the terminal-reward conventions.
    """

    def __init__(self, table: FlowTable, env: Env):
        self._table = table
        self._env = env
        self.log_z = math.log(table.total_flow)
        self.uniform_backward = True

    def log_edge_flows(self, env: Env, s) -> np.ndarray:
        out = np.full(env.n_actions, -np.inf)
        for a in np.flatnonzero(env.allowed_actions(s)):
            out[int(a)] = math.log(max(self._table.edge_flows[(s, int(a))], LOG_FLOOR))
        return out

    def log_forward(self, env: Env, s) -> np.ndarray:
        out = self.log_edge_flows(env, s)
        return out - math.log(self._table.state_flows[s])

    def log_backward(self, env: Env, s) -> np.ndarray:
        parents = env.parents(s)
        out = np.full(env.n_actions, -np.inf)
        for _, a in parents:
            out[a] = -math.log(len(parents))
        return out

    def log_state_flow(self, env: Env, s) -> float:
        return math.log(self._table.state_flows[s])


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------

def empirical_l1(counts: dict, total: int, truth: DensityTable) -> float:
    """Mean absolute gap between windowed visit frequencies and the target."""
    if total <= 0:
        raise ValueError("empirical_l1 needs a non-empty window")
    gap = math.fsum(
        abs(counts.get(x, 0) / total - p) for x, p in truth.probs.items()
    )
    return gap / len(truth.probs)


def density_l1(learned: DensityTable, truth: DensityTable) -> float:
    """Mean absolute gap between an exact learned density and the target."""
    gap = math.fsum(abs(learned.probs.get(x, 0.0) - p) for x, p in truth.probs.items())
    return gap / len(truth.probs)


def uniform_l1(truth: DensityTable) -> float:
    """Gap between the uniform distribution and the target; a scale reference."""
    n = len(truth.probs)
    gap = math.fsum(abs(1.0 / n - p) for p in truth.probs.values())
    return gap / n


def count_modes(discovered: set, env: Env, cap: int = DEFAULT_ENUM_CAP) -> tuple[int, int]:
    """(mode cells hit, high-reward regions hit) for a set of visited terminals."""
    modes = env.mode_set(cap)
    hit = discovered & modes
    regions = {env.region_of(x) for x in hit}
    return len(hit), len(regions)


def topk_mean(rewards: Iterable[float], k: int) -> tuple[float, bool]:
    """Mean of the k largest rewards; flag is False when fewer than k exist."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    top = heapq.nlargest(k, rewards)
    if not top:
        raise ValueError("topk_mean needs at least one reward")
    return float(np.mean(top)), len(top) >= k


@dataclass
class TopKTracker:
    """Streaming top-k rewards via a bounded min-heap."""

    k: int
    _heap: list[float] = field(default_factory=list)
    seen: int = 0

    def add(self, reward: float) -> None:
        self.seen += 1
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, reward)
        elif reward > self._heap[0]:
            heapq.heapreplace(self._heap, reward)

    def mean(self) -> float:
        if not self._heap:
            raise ValueError("no rewards recorded yet")
        return float(np.mean(self._heap))

    @property
    def complete(self) -> bool:
        return len(self._heap) >= self.k
