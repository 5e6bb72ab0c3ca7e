"""Population optimization of sampler weights: selection, crossover, mutation.

Each generation evaluates every member on its mean trajectory reward (the
trajectories land in the replay buffer), copies the elite members forward
bit-exactly, fills every non-elite slot with a crossover child between a
random elite and a random member of a fitness-proportionally selected
breeding pool, and mutates the children.  Periodically the worst slot is
overwritten with the gradient-trained learner's weights.

Determinism: every member evaluation draws from its own generator keyed by
(seed, generation, member index), so results are bit-identical no matter
how many workers evaluate the population; buffer appends happen afterwards
in member order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .agent import GfnAgent, Trajectory
from .envs import Env
from .errors import ConfigError
from .numnet import ParamVector, all_row_views, init_params, row_views
from .replay import ReplayBuffer


@dataclass(frozen=True)
class EvoConfig:
    k: int = 5                      # population size
    eval_episodes: int = 4          # trajectories per member per generation
    elite_frac: float = 0.2
    mutation_strength: float = 1.0  # std of the additive Gaussian noise
    p_mutation: float = 0.9         # per-child probability of mutating at all
    row_mut_frac: float = 0.1       # share of rows perturbed when mutating
    sync_period: int = 10           # generations between learner reinsertion; 0 disables
    selection: str = "roulette"     # or "tournament" (size 3)
    tournament_size: int = 3

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"population size must be >= 2, got {self.k}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if not 0.0 < self.elite_frac < 1.0:
            raise ConfigError("elite_frac must lie in (0, 1)")
        if self.mutation_strength <= 0.0:
            raise ConfigError("mutation_strength must be positive")
        if not 0.0 <= self.p_mutation <= 1.0:
            raise ConfigError("p_mutation must lie in [0, 1]")
        if not 0.0 < self.row_mut_frac <= 1.0:
            raise ConfigError("row_mut_frac must lie in (0, 1]")
        if self.selection not in ("roulette", "tournament"):
            raise ConfigError(f"unknown selection scheme {self.selection!r}")

    @property
    def n_elites(self) -> int:
        return max(1, math.ceil(self.elite_frac * self.k - 1e-9))


@dataclass
class Population:
    members: list[ParamVector]
    fitness: np.ndarray
    generation: int = 0

    @classmethod
    def initial(cls, proto: GfnAgent, k: int, seed: int) -> "Population":
        members = [
            init_params(proto.spec, rng_stream(seed, 5, i)) for i in range(k)
        ]
        return cls(members, np.full(k, np.nan), 0)

    def __len__(self) -> int:
        return len(self.members)


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a namespaced position in the run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def evaluate(
    agent: GfnAgent,
    env: Env,
    episodes: int,
    rng: np.random.Generator,
    buffer: ReplayBuffer | None = None,
) -> tuple[float, list[Trajectory]]:
    """Mean terminal reward of ``episodes`` on-policy rollouts (no exploration noise).

    Every rollout is appended to ``buffer`` when one is given.
    """
    trajs = [agent.sample_trajectory(env, rng) for _ in range(episodes)]
    if buffer is not None:
        for t in trajs:
            buffer.insert(t)
    fitness = float(np.mean([t.reward for t in trajs]))
    return fitness, trajs


def select_elites(fitness: np.ndarray, n_elites: int) -> list[int]:
    """Indices of the top members by fitness; ties go to the lower index."""
    order = np.argsort(-np.asarray(fitness), kind="stable")
    return [int(i) for i in order[:n_elites]]


def roulette_select(fitness: np.ndarray, count: int, rng: np.random.Generator) -> list[int]:
    """Fitness-proportional draws with replacement.

    Weights are shifted to stay positive even when all fitness values tie or
    go negative: w = f - min(f) + 1e-8*(max - min) + 1e-12.
    """
    if count == 0:
        return []
    f = np.asarray(fitness, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ConfigError("fitness must be evaluated before selection")
    span = float(f.max() - f.min())
    w = f - f.min() + 1e-8 * span + 1e-12
    p = w / w.sum()
    return [int(i) for i in rng.choice(f.size, size=count, replace=True, p=p)]


def tournament_select(fitness: np.ndarray, count: int, rng: np.random.Generator,
                      size: int = 3) -> list[int]:
    """Best-of-``size`` tournaments, ties to the lower index."""
    f = np.asarray(fitness)
    picks = []
    for _ in range(count):
        entrants = rng.integers(0, f.size, size=size)
        best = min(entrants, key=lambda i: (-f[i], i))
        picks.append(int(best))
    return picks


def crossover(
    a: ParamVector, b: ParamVector, rng: np.random.Generator
) -> tuple[ParamVector, ParamVector]:
    """Row-swap crossover on copies of both parents.

    Per layer with N rows: draw num_swaps uniform in {0..N-1}; each swap
    draws a row index uniform in {0..N-1} and a coin; heads copies the
    second child's current row into the first, tails the reverse.  Every
    row of each child therefore matches one parent's row at that position.
    """
    if a.layouts != b.layouts:
        raise ConfigError("crossover requires identical parameter layouts")
    child_a, child_b = a.copy(), b.copy()
    for layer in range(len(a.layouts)):
        rows_a = row_views(child_a, layer)
        rows_b = row_views(child_b, layer)
        n = len(rows_a)
        num_swaps = int(rng.integers(0, n))
        for _ in range(num_swaps):
            idx = int(rng.integers(0, n))
            if rng.random() < 0.5:
                rows_a[idx][:] = rows_b[idx]
            else:
                rows_b[idx][:] = rows_a[idx]
    return child_a, child_b


def mutate(params: ParamVector, cfg: EvoConfig, rng: np.random.Generator) -> ParamVector:
    """Gaussian perturbation of a sampled fraction of rows, or a no-op.

    With probability 1 - p_mutation the input is returned untouched.
    Otherwise ceil(row_mut_frac * total_rows) distinct rows receive i.i.d.
    Normal(0, mutation_strength^2) noise.
    """
    if rng.random() >= cfg.p_mutation:
        return params
    out = params.copy()
    rows = all_row_views(out)
    n_rows = len(rows)
    n_mut = max(1, math.ceil(cfg.row_mut_frac * n_rows - 1e-9))
    chosen = rng.choice(n_rows, size=min(n_mut, n_rows), replace=False)
    for i in chosen:
        rows[int(i)] += rng.normal(0.0, cfg.mutation_strength, size=rows[int(i)].shape)
    return out


@dataclass
class GenerationResult:
    population: Population
    fitness: np.ndarray          # fitness of the evaluated (incoming) members
    trajectories: list[Trajectory]  # all k*E rollouts in member order
    elite_indices: list[int]
    synced_slot: int | None      # slot overwritten with the learner's weights


EvaluateFn = Callable[[int, GfnAgent, np.random.Generator], tuple[float, list[Trajectory]]]


def evolve_generation(
    pop: Population,
    env: Env,
    proto: GfnAgent,
    buffer: ReplayBuffer | None,
    cfg: EvoConfig,
    seed: int,
    learner_params: ParamVector | None = None,
    workers: int = 1,
    evaluate_fn: EvaluateFn | None = None,
) -> GenerationResult:
    """Run one full generation and return the next population.

    ``proto`` supplies the objective kind and network spec the members share.
    ``evaluate_fn`` may replace the rollout-based fitness (tests use this);
    its results must only depend on its arguments.
    """
    k = len(pop)
    gen = pop.generation

    def default_eval(i: int, agent: GfnAgent, rng: np.random.Generator):
        return evaluate(agent, env, cfg.eval_episodes, rng, buffer=None)

    eval_fn = evaluate_fn or default_eval

    def run_member(i: int):
        agent = proto.clone_with(pop.members[i])
        return eval_fn(i, agent, rng_stream(seed, 0, gen, i))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_member, range(k)))
    else:
        results = [run_member(i) for i in range(k)]

    fitness = np.array([r[0] for r in results], dtype=np.float64)
    trajectories: list[Trajectory] = []
    for _, trajs in results:  # merged in member order for determinism
        trajectories.extend(trajs)
        if buffer is not None:
            for t in trajs:
                buffer.insert(t)

    elite_idx = select_elites(fitness, cfg.n_elites)
    elite_set = set(elite_idx)
    non_elite_slots = [i for i in range(k) if i not in elite_set]

    gen_rng = rng_stream(seed, 1, gen)
    pool_count = max(int(math.floor((1.0 - cfg.elite_frac) * k + 1e-9)), 0)
    if cfg.selection == "tournament":
        pool_idx = tournament_select(fitness, pool_count, gen_rng, cfg.tournament_size)
    else:
        pool_idx = roulette_select(fitness, pool_count, gen_rng)

    children: list[ParamVector] = []
    for _ in non_elite_slots:
        e = elite_idx[int(gen_rng.integers(0, len(elite_idx)))]
        partner = pool_idx[int(gen_rng.integers(0, len(pool_idx)))] if pool_idx else e
        child, _ = crossover(pop.members[e], pop.members[partner], gen_rng)
        children.append(child)
    children = [mutate(c, cfg, gen_rng) for c in children]

    new_members: list[ParamVector] = [None] * k  # type: ignore[list-item]
    for i in elite_idx:
        new_members[i] = pop.members[i]  # unmodified, same slot
    for slot, child in zip(non_elite_slots, children):
        new_members[slot] = child

    synced = None
    if (
        cfg.sync_period > 0
        and learner_params is not None
        and (gen + 1) % cfg.sync_period == 0
        and non_elite_slots
    ):
        synced = min(non_elite_slots, key=lambda i: (fitness[i], i))
        new_members[synced] = learner_params.copy()

    next_pop = Population(new_members, np.full(k, np.nan), gen + 1)
    return GenerationResult(next_pop, fitness, trajectories, elite_idx, synced)
