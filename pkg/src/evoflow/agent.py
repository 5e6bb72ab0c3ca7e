"""Sampler agents: objective-specific heads over one MLP, masking, trajectories.

One network serves all heads.  A flow-matching agent outputs one log edge
flow per action.  Detailed-balance and trajectory-balance agents double the
action space into forward and backward logit blocks (the backward slot of
an edge is its forward action index); detailed balance adds a scalar
log-state-flow output, trajectory balance a separate learned log-partition
scalar trained at its own rate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .envs import Env
from .errors import ConfigError, DataError, UsageError
from .numnet import MlpSpec, ParamVector, forward_batch, init_params, mlp_forward


class ObjectiveKind(str, enum.Enum):
    FM = "FM"
    DB = "DB"
    TB = "TB"

    @classmethod
    def parse(cls, value: "str | ObjectiveKind") -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown objective {value!r}; expected FM, DB, or TB") from None


@dataclass(frozen=True)
class Trajectory:
    """Ordered (state, action) steps ending in a terminal state with its reward."""

    steps: tuple[tuple[object, int], ...]
    terminal: object
    reward: float
    log_pf: float | None = None  # policy log-probability accumulated while sampling

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(a for _, a in self.steps)


def output_dim_for(kind: ObjectiveKind, n_actions: int) -> int:
    if kind is ObjectiveKind.FM:
        return n_actions
    if kind is ObjectiveKind.DB:
        return 2 * n_actions + 1
    return 2 * n_actions


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over the allowed entries; disallowed entries come back -inf.

    Works entirely in log space: safe for logits anywhere in [-100, 100] and
    immune to values parked on masked slots.
    """
    out = np.full(logits.shape[0], -np.inf)
    z = logits[mask]
    if z.size == 0:
        raise UsageError("masked_log_softmax called with an empty mask")
    m = z.max()
    out[mask] = z - (m + np.log(np.exp(z - m).sum()))
    return out


@dataclass
class GfnAgent:
    """One sampler: objective kind, network spec, flat parameters, optional log Z."""

    kind: ObjectiveKind
    spec: MlpSpec
    params: ParamVector
    log_z: float = 0.0
    uniform_backward: bool = False
    n_actions: int = 0

    def __post_init__(self):
        if self.n_actions <= 0:
            raise ConfigError("agent needs the environment action count")
        expect = output_dim_for(self.kind, self.n_actions)
        if self.spec.output_dim != expect:
            raise ConfigError(
                f"{self.kind.value} agent needs output_dim {expect}, spec has {self.spec.output_dim}"
            )
        if self.kind is ObjectiveKind.FM:
            self.uniform_backward = True

    # -- head slices ------------------------------------------------------
    @property
    def forward_slice(self) -> slice:
        return slice(0, self.n_actions)

    @property
    def backward_slice(self) -> slice:
        if self.kind is ObjectiveKind.FM:
            raise UsageError("flow-matching agents have no backward head")
        return slice(self.n_actions, 2 * self.n_actions)

    @property
    def state_flow_index(self) -> int:
        if self.kind is not ObjectiveKind.DB:
            raise UsageError("only detailed-balance agents carry a state-flow head")
        return 2 * self.n_actions

    def clone_with(self, params: ParamVector) -> "GfnAgent":
        return GfnAgent(self.kind, self.spec, params, self.log_z, self.uniform_backward,
                        self.n_actions)

    # -- per-state evaluations ---------------------------------------------
    def logits(self, env: Env, s) -> np.ndarray:
        return mlp_forward(self.spec, self.params, env.encode_state(s))

    def logits_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        return forward_batch(self.spec, self.params, inputs)

    def log_edge_flows(self, env: Env, s, logits: np.ndarray | None = None) -> np.ndarray:
        """Predicted log edge flows over allowed actions (-inf elsewhere); FM only."""
        if self.kind is not ObjectiveKind.FM:
            raise UsageError("log_edge_flows is only defined for flow-matching agents")
        mask = env.allowed_actions(s)
        if logits is None:
            logits = self.logits(env, s)
        out = np.full(self.n_actions, -np.inf)
        out[mask] = logits[self.forward_slice][mask]
        return out

    def log_forward(self, env: Env, s, logits: np.ndarray | None = None) -> np.ndarray:
        """Masked log P_F over actions.  FM agents normalize their edge flows."""
        mask = env.allowed_actions(s)
        if logits is None:
            logits = self.logits(env, s)
        return masked_log_softmax(logits[self.forward_slice], mask)

    def log_backward(self, env: Env, s, logits: np.ndarray | None = None) -> np.ndarray:
        """Masked log P_B over the parent-edge slots of ``s``."""
        parents = env.parents(s)
        if not parents:
            raise UsageError(f"state {s!r} has no parent edges")
        mask = np.zeros(self.n_actions, dtype=bool)
        for _, a in parents:
            mask[a] = True
        if self.uniform_backward:
            out = np.full(self.n_actions, -np.inf)
            out[mask] = -np.log(len(parents))
            return out
        if logits is None:
            logits = self.logits(env, s)
        return masked_log_softmax(logits[self.backward_slice], mask)

    def log_state_flow(self, env: Env, s, logits: np.ndarray | None = None) -> float:
        if logits is None:
            logits = self.logits(env, s)
        return float(logits[self.state_flow_index])

    def forward_dist(self, env: Env, s) -> np.ndarray:
        """Forward action probabilities; exactly zero on masked actions."""
        lp = self.log_forward(env, s)
        p = np.exp(lp)
        p[~np.isfinite(lp)] = 0.0
        return p

    def backward_dist(self, env: Env, s) -> np.ndarray:
        lp = self.log_backward(env, s)
        p = np.exp(lp)
        p[~np.isfinite(lp)] = 0.0
        return p

    # -- trajectories -------------------------------------------------------
    def sample_trajectory(
        self, env: Env, rng: np.random.Generator, explore_eps: float = 0.0
    ) -> Trajectory:
        """Roll out the forward policy from the initial state to termination.

        With probability ``explore_eps`` a step is drawn uniformly over the
        allowed actions instead; the accumulated log-probability is always
        that of the policy itself.
        """
        if not 0.0 <= explore_eps <= 1.0:
            raise ConfigError(f"explore_eps must lie in [0, 1], got {explore_eps}")
        s = env.initial_state()
        steps: list[tuple[object, int]] = []
        log_pf = 0.0
        for _ in range(env.max_traj_len):
            lp = self.log_forward(env, s)
            allowed = np.flatnonzero(np.isfinite(lp))
            if explore_eps > 0.0 and rng.random() < explore_eps:
                a = int(allowed[rng.integers(0, allowed.size)])
            else:
                p = np.exp(lp[allowed])
                a = int(allowed[rng.choice(allowed.size, p=p / p.sum())])
            log_pf += float(lp[a])
            steps.append((s, a))
            s_next, done = env.step(s, a)
            if done:
                return Trajectory(tuple(steps), s_next, env.reward(s_next), log_pf)
            s = s_next
        raise RuntimeError("trajectory exceeded the environment length bound; mask bug")

    def trajectory_logprobs(self, env: Env, traj: Trajectory) -> "TrajLogProbs":
        """Per-step and total log P_F / log P_B of any trajectory on this env.

        Works on replayed trajectories this agent never generated.  The final
        stop transition of a grid trajectory contributes no backward term
        (the sink has a single parent edge).
        """
        validate_trajectory(env, traj)
        n = len(traj.steps)
        log_pf = np.zeros(n)
        log_pb = np.zeros(n)
        for t, (s, a) in enumerate(traj.steps):
            log_pf[t] = self.log_forward(env, s)[a]
            done = t == n - 1
            s_next = traj.terminal if done else traj.steps[t + 1][0]
            if done and env.stop_action is not None:
                log_pb[t] = 0.0  # sink reached via stop: single parent edge
            else:
                log_pb[t] = self.log_backward(env, s_next)[a]
        return TrajLogProbs(log_pf, log_pb)


def validate_trajectory(env: Env, traj: Trajectory) -> None:
    """Check that a trajectory replays on ``env``; DataError names the bad step."""
    n = len(traj.steps)
    if n == 0:
        raise DataError("empty trajectory")
    for t, (s, a) in enumerate(traj.steps):
        try:
            mask = env.allowed_actions(s)
        except UsageError as exc:
            raise DataError(f"step {t}: {exc}") from None
        if not 0 <= a < env.n_actions or not mask[a]:
            raise DataError(f"step {t}: action {a} not allowed at state {s!r}")
        s_next, done = env.step(s, a)
        expect = traj.terminal if t == n - 1 else traj.steps[t + 1][0]
        if s_next != expect or done != (t == n - 1):
            raise DataError(f"step {t}: transition does not match the recorded trajectory")


@dataclass(frozen=True)
class TrajLogProbs:
    forward_steps: np.ndarray
    backward_steps: np.ndarray

    @property
    def sum_forward(self) -> float:
        return float(self.forward_steps.sum())

    @property
    def sum_backward(self) -> float:
        return float(self.backward_steps.sum())


def make_agent(
    kind: "ObjectiveKind | str",
    env: Env,
    hidden_dims: tuple[int, ...],
    rng: np.random.Generator,
    uniform_backward: bool = False,
) -> GfnAgent:
    """Build an agent with freshly initialized weights sized for ``env``."""
    kind = ObjectiveKind.parse(kind)
    spec = MlpSpec(
        input_dim=env.encode_dim,
        hidden_dims=tuple(hidden_dims),
        output_dim=output_dim_for(kind, env.n_actions),
    )
    return GfnAgent(
        kind=kind,
        spec=spec,
        params=init_params(spec, rng),
        uniform_backward=uniform_backward,
        n_actions=env.n_actions,
    )
