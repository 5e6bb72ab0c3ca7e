"""The three training objectives as differentiable scalar losses over batches.

Flow matching is state-wise: each visited state's log in-flow must equal
its log out-flow, and each trajectory's sink pins the flow entering it to
log R(x).  Detailed balance is edge-wise with F(x) := R(x) at terminals.
Trajectory balance is trajectory-wise with a learned log partition value.

Every loss exists twice: a value-only path that reads any object exposing
``log_forward`` / ``log_backward`` / ``log_edge_flows`` / ``log_state_flow``
/ ``log_z`` (used by the exact-flow oracle), and a gradient path for neural
agents that batches all network evaluations and routes analytic gradients
through the masked log-softmax heads.  The two paths must agree bit-for-bit
on the loss value; tests enforce this.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .agent import GfnAgent, ObjectiveKind, Trajectory, validate_trajectory
from .envs import Env
from .errors import ConfigError, DataError
from .numnet import ParamVector, backward_batch
from .oracle import LOG_FLOOR


@dataclass
class LossReport:
    """Mean loss, per-item losses, and the gradient routed to the agent."""

    mean_loss: float
    per_item: np.ndarray
    grad: ParamVector | None
    grad_log_z: float | None
    aux: dict[str, float]


@dataclass(frozen=True)
class FmItem:
    """One flow-matching constraint: an interior state or a trajectory sink."""

    state: object
    is_sink: bool


@dataclass(frozen=True)
class Transition:
    """One edge (s, a) -> s' with the terminal flag and terminal reward."""

    state: object
    action: int
    next_state: object
    done: bool
    reward: float = 0.0


def fm_items(env: Env, trajectories: list[Trajectory]) -> list[FmItem]:
    """Non-root visited states plus one sink item per trajectory."""
    items: list[FmItem] = []
    root = env.initial_state()
    for traj in trajectories:
        for s, _ in traj.steps:
            if s == root:
                continue
            if env.stop_action is None and env.is_terminal(s):
                continue  # terminal sequence states enter as sinks only
            items.append(FmItem(s, False))
        items.append(FmItem(traj.terminal, True))
    return items


def transitions(env: Env, trajectories: list[Trajectory]) -> list[Transition]:
    """Every edge of every trajectory, terminal edges flagged with their reward."""
    out: list[Transition] = []
    for traj in trajectories:
        n = len(traj.steps)
        for t, (s, a) in enumerate(traj.steps):
            done = t == n - 1
            nxt = traj.terminal if done else traj.steps[t + 1][0]
            out.append(Transition(s, a, nxt, done, traj.reward if done else 0.0))
    return out


def _log_reward(r: float) -> float:
    return math.log(max(r, LOG_FLOOR))


def _sink_parent_edges(env: Env, x) -> list[tuple[object, int]]:
    """Edges feeding a sink: the stop edge (grid) or the usual parents (sequence)."""
    if env.stop_action is not None:
        return [(x, env.stop_action)]
    return env.parents(x)


def _logsumexp(values: list[float]) -> float:
    arr = np.asarray(values)
    m = arr.max()
    return float(m + np.log(np.exp(arr - m).sum()))


# ---------------------------------------------------------------------------
# Value-only paths (shared by the exact-flow oracle and the consistency tests).
# ---------------------------------------------------------------------------

def fm_loss_value(view, env: Env, items: list[FmItem]) -> tuple[float, np.ndarray]:
    per = []
    root = env.initial_state()
    for item in items:
        if not item.is_sink and item.state == root:
            warnings.warn("flow-matching batch contained the root state; excluded")
            continue
        if item.is_sink:
            edges = _sink_parent_edges(env, item.state)
            inflow = _logsumexp([float(view.log_edge_flows(env, p)[a]) for p, a in edges])
            outflow = _log_reward(env.reward(item.state))
        else:
            edges = env.parents(item.state)
            inflow = _logsumexp([float(view.log_edge_flows(env, p)[a]) for p, a in edges])
            flows = view.log_edge_flows(env, item.state)
            outflow = _logsumexp(list(flows[np.isfinite(flows)]))
        per.append((inflow - outflow) ** 2)
    per = np.asarray(per)
    return float(per.mean()) if per.size else 0.0, per


def db_loss_value(view, env: Env, batch: list[Transition]) -> tuple[float, np.ndarray]:
    per = []
    for tr in batch:
        _validate_transition(env, tr)
        lhs = view.log_state_flow(env, tr.state) + float(view.log_forward(env, tr.state)[tr.action])
        if tr.done and env.stop_action is not None:
            rhs = _log_reward(tr.reward)  # sink has one parent edge: log P_B = 0
        elif tr.done:
            rhs = _log_reward(tr.reward) + float(view.log_backward(env, tr.next_state)[tr.action])
        else:
            rhs = view.log_state_flow(env, tr.next_state) + float(
                view.log_backward(env, tr.next_state)[tr.action]
            )
        per.append((lhs - rhs) ** 2)
    per = np.asarray(per)
    return float(per.mean()) if per.size else 0.0, per


def tb_loss_value(view, env: Env, batch: list[Trajectory]) -> tuple[float, np.ndarray]:
    per = []
    for traj in batch:
        if traj.reward <= 0.0:
            raise DataError(f"trajectory balance needs positive rewards, got {traj.reward}")
        total = view.log_z - _log_reward(traj.reward)
        n = len(traj.steps)
        for t, (s, a) in enumerate(traj.steps):
            total += float(view.log_forward(env, s)[a])
            done = t == n - 1
            nxt = traj.terminal if done else traj.steps[t + 1][0]
            if not (done and env.stop_action is not None):
                total -= float(view.log_backward(env, nxt)[a])
        per.append(total ** 2)
    per = np.asarray(per)
    return float(per.mean()) if per.size else 0.0, per


def _validate_transition(env: Env, tr: Transition) -> None:
    try:
        mask = env.allowed_actions(tr.state)
    except Exception as exc:
        raise DataError(f"transition source {tr.state!r} invalid: {exc}") from None
    if not 0 <= tr.action < env.n_actions or not mask[tr.action]:
        raise DataError(f"edge ({tr.state!r}, {tr.action}) is not in the environment graph")
    nxt, done = env.step(tr.state, tr.action)
    if nxt != tr.next_state or done != tr.done:
        raise DataError(f"edge ({tr.state!r}, {tr.action}) does not lead to {tr.next_state!r}")


# ---------------------------------------------------------------------------
# Gradient paths.
# ---------------------------------------------------------------------------

class _RowIndex:
    """Deduplicated encoding rows: one network evaluation per distinct state."""

    def __init__(self, env: Env):
        self.env = env
        self.states: list[object] = []
        self._pos: dict[object, int] = {}

    def row(self, s) -> int:
        pos = self._pos.get(s)
        if pos is None:
            pos = len(self.states)
            self._pos[s] = pos
            self.states.append(s)
        return pos

    def encode(self) -> np.ndarray:
        return np.stack([self.env.encode_state(s) for s in self.states])


def _evaluate_rows(agent: GfnAgent, env: Env, rows: _RowIndex):
    """Forward pass over all distinct states plus masked log-softmax heads."""
    inputs = rows.encode()
    logits, cache = agent.logits_batch(inputs)
    n = len(rows.states)
    a_dim = agent.n_actions

    fwd_mask = np.zeros((n, a_dim), dtype=bool)
    bwd_mask = np.zeros((n, a_dim), dtype=bool)
    for i, s in enumerate(rows.states):
        if env.stop_action is not None or not env.is_terminal(s):
            fwd_mask[i] = env.allowed_actions(s)
        for _, a in env.parents(s):
            bwd_mask[i, a] = True

    def _masked_lp(block: np.ndarray, mask: np.ndarray) -> np.ndarray:
        z = np.where(mask, block, -np.inf)
        safe = mask.any(axis=1)
        out = np.full_like(z, -np.inf)
        if safe.any():
            m = z[safe].max(axis=1, keepdims=True)
            e = np.exp(z[safe] - m)
            out[safe] = z[safe] - (m + np.log(e.sum(axis=1, keepdims=True)))
        return out

    fwd_lp = _masked_lp(logits[:, agent.forward_slice], fwd_mask)
    if agent.kind is ObjectiveKind.FM or agent.uniform_backward:
        bwd_lp = None
    else:
        bwd_lp = _masked_lp(logits[:, agent.backward_slice], bwd_mask)
    return logits, cache, fwd_lp, bwd_lp, bwd_mask


def _uniform_log_backward(bwd_mask_row: np.ndarray, a: int) -> float:
    return -math.log(int(bwd_mask_row.sum()))


def _finish(agent: GfnAgent, cache, upstream, per_item, grad_log_z, aux) -> LossReport:
    grad = backward_batch(agent.spec, agent.params, cache, upstream)
    per_item = np.asarray(per_item)
    mean = float(per_item.mean()) if per_item.size else 0.0
    return LossReport(mean, per_item, grad, grad_log_z, aux)


def tb_loss(agent: GfnAgent, env: Env, batch: list[Trajectory]) -> LossReport:
    """Trajectory-balance loss with gradients, including d/d log_z."""
    if agent.kind is not ObjectiveKind.TB:
        raise ConfigError(f"tb_loss needs a TB agent, got {agent.kind.value}")
    if not batch:
        raise DataError("empty trajectory batch")
    rows = _RowIndex(env)
    uses = []  # per trajectory: fwd [(row, action)...], bwd [(row, action)...]
    for traj in batch:
        if traj.reward <= 0.0:
            raise DataError(f"trajectory balance needs positive rewards, got {traj.reward}")
        validate_trajectory(env, traj)
        fwd, bwd = [], []
        n = len(traj.steps)
        for t, (s, a) in enumerate(traj.steps):
            fwd.append((rows.row(s), a))
            done = t == n - 1
            nxt = traj.terminal if done else traj.steps[t + 1][0]
            if not (done and env.stop_action is not None):
                bwd.append((rows.row(nxt), a))
        uses.append((fwd, bwd))

    logits, cache, fwd_lp, bwd_lp, bwd_mask = _evaluate_rows(agent, env, rows)
    b = len(batch)
    per_item = np.zeros(b)
    signed = np.zeros(b)
    for i, (traj, (fwd, bwd)) in enumerate(zip(batch, uses)):
        total = agent.log_z - _log_reward(traj.reward)
        for r, a in fwd:
            total += float(fwd_lp[r, a])
        for r, a in bwd:
            if bwd_lp is None:
                total -= _uniform_log_backward(bwd_mask[r], a)
            else:
                total -= float(bwd_lp[r, a])
        signed[i] = total
        per_item[i] = total * total

    upstream = np.zeros_like(logits)
    fs, bs = agent.forward_slice, agent.backward_slice
    for i, (fwd, bwd) in enumerate(uses):
        coef = 2.0 * signed[i] / b
        for r, a in fwd:
            p = np.exp(fwd_lp[r])
            p[~np.isfinite(fwd_lp[r])] = 0.0
            upstream[r, fs] -= coef * p
            upstream[r, fs.start + a] += coef
        if bwd_lp is not None:
            for r, a in bwd:
                p = np.exp(bwd_lp[r])
                p[~np.isfinite(bwd_lp[r])] = 0.0
                upstream[r, bs] += coef * p
                upstream[r, bs.start + a] -= coef
    grad_log_z = float(2.0 * signed.sum() / b)
    return _finish(agent, cache, upstream, per_item, grad_log_z,
                   {"log_z": agent.log_z})


def db_loss(agent: GfnAgent, env: Env, batch: list[Transition]) -> LossReport:
    """Detailed-balance loss with gradients; F(x) is replaced by R(x) at sinks."""
    if agent.kind is not ObjectiveKind.DB:
        raise ConfigError(f"db_loss needs a DB agent, got {agent.kind.value}")
    if not batch:
        raise DataError("empty transition batch")
    rows = _RowIndex(env)
    for tr in batch:
        _validate_transition(env, tr)
        rows.row(tr.state)
        if not (tr.done and env.stop_action is not None):
            rows.row(tr.next_state)

    logits, cache, fwd_lp, bwd_lp, bwd_mask = _evaluate_rows(agent, env, rows)
    sf = agent.state_flow_index
    b = len(batch)
    per_item = np.zeros(b)
    signed = np.zeros(b)
    state_flows = []
    for i, tr in enumerate(batch):
        r_s = rows.row(tr.state)
        lhs = float(logits[r_s, sf]) + float(fwd_lp[r_s, tr.action])
        state_flows.append(float(logits[r_s, sf]))
        if tr.done and env.stop_action is not None:
            rhs = _log_reward(tr.reward)
        else:
            r_n = rows.row(tr.next_state)
            if bwd_lp is None:
                lb = _uniform_log_backward(bwd_mask[r_n], tr.action)
            else:
                lb = float(bwd_lp[r_n, tr.action])
            if tr.done:
                rhs = _log_reward(tr.reward) + lb
            else:
                rhs = float(logits[r_n, sf]) + lb
        signed[i] = lhs - rhs
        per_item[i] = signed[i] ** 2

    upstream = np.zeros_like(logits)
    fs, bs = agent.forward_slice, agent.backward_slice
    for i, tr in enumerate(batch):
        coef = 2.0 * signed[i] / b
        r_s = rows.row(tr.state)
        upstream[r_s, sf] += coef
        p = np.exp(fwd_lp[r_s])
        p[~np.isfinite(fwd_lp[r_s])] = 0.0
        upstream[r_s, fs] -= coef * p
        upstream[r_s, fs.start + tr.action] += coef
        if not (tr.done and env.stop_action is not None):
            r_n = rows.row(tr.next_state)
            if not tr.done:
                upstream[r_n, sf] -= coef
            if bwd_lp is not None:
                q = np.exp(bwd_lp[r_n])
                q[~np.isfinite(bwd_lp[r_n])] = 0.0
                upstream[r_n, bs] += coef * q
                upstream[r_n, bs.start + tr.action] -= coef
    mean_flow = float(np.mean(state_flows)) if state_flows else 0.0
    return _finish(agent, cache, upstream, per_item, None,
                   {"mean_log_state_flow": mean_flow})


def fm_loss(agent: GfnAgent, env: Env, batch: list[FmItem]) -> LossReport:
    """Flow-matching loss with gradients over the predicted log edge flows."""
    if agent.kind is not ObjectiveKind.FM:
        raise ConfigError(f"fm_loss needs an FM agent, got {agent.kind.value}")
    rows = _RowIndex(env)
    root = env.initial_state()
    kept: list[tuple[FmItem, list[tuple[int, int]], int | None]] = []
    for item in batch:
        if not item.is_sink and item.state == root:
            warnings.warn("flow-matching batch contained the root state; excluded")
            continue
        edges = (_sink_parent_edges(env, item.state) if item.is_sink
                 else env.parents(item.state))
        if not item.is_sink and not edges:
            raise DataError(f"state {item.state!r} has no parent edges")
        parent_rows = [(rows.row(p), a) for p, a in edges]
        own = None if item.is_sink else rows.row(item.state)
        kept.append((item, parent_rows, own))
    if not kept:
        raise DataError("flow-matching batch had no usable states")

    logits, cache, _, _, _ = _evaluate_rows(agent, env, rows)
    flows = logits[:, agent.forward_slice]
    b = len(kept)
    per_item = np.zeros(b)
    upstream = np.zeros_like(logits)
    fs = agent.forward_slice
    for i, (item, parent_rows, own) in enumerate(kept):
        in_vals = np.array([flows[r, a] for r, a in parent_rows])
        m = in_vals.max()
        inflow = float(m + np.log(np.exp(in_vals - m).sum()))
        in_w = np.exp(in_vals - inflow)
        if item.is_sink:
            outflow = _log_reward(env.reward(item.state))
            out_w, out_slots = None, None
        else:
            mask = env.allowed_actions(item.state)
            out_slots = np.flatnonzero(mask)
            out_vals = flows[own, out_slots]
            m2 = out_vals.max()
            outflow = float(m2 + np.log(np.exp(out_vals - m2).sum()))
            out_w = np.exp(out_vals - outflow)
        diff = inflow - outflow
        per_item[i] = diff * diff
        coef = 2.0 * diff / b
        for (r, a), w in zip(parent_rows, in_w):
            upstream[r, fs.start + a] += coef * w
        if out_w is not None:
            for a, w in zip(out_slots, out_w):
                upstream[own, fs.start + int(a)] -= coef * w
    return _finish(agent, cache, upstream, per_item, None, {})
