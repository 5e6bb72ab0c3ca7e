"""End-to-end training loop: evolve, sample, fit, measure.

Each step optionally runs one population generation (filling the replay
buffer), samples ceil(online_ratio * batch) fresh trajectories from the
gradient-trained learner, draws the remainder from the buffer, takes one
Adam step on the configured objective, and records metrics.  With the
population disabled the same plumbing trains a plain buffer-equipped
baseline.
"""
from __future__ import annotations

import math
import time
import warnings
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .agent import GfnAgent, ObjectiveKind, Trajectory, make_agent
from .envs import DEFAULT_ENUM_CAP, Env
from .errors import ConfigError, TrainingError
from .evolution import EvoConfig, Population, evolve_generation, rng_stream
from .losses import db_loss, fm_items, fm_loss, tb_loss, transitions
from .numnet import AdamState, LayerLayout, ParamVector, adam_step
from .oracle import (
    TopKTracker,
    density_l1,
    empirical_l1,
    exact_learned_density,
    true_density,
    uniform_l1,
)
from .replay import ReplayBuffer, ReplayConfig

CSV_HEADER = (
    "step,loss,log_z,states_visited,reward_calls,modes_cells,modes_regions,"
    "l1_empirical,l1_exact,top100,buffer_size,wall_ms"
)


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveKind = ObjectiveKind.TB
    total_steps: int = 2500
    batch_size: int = 16
    online_ratio: float = 0.5
    lr: float | None = None          # resolved: 1e-4 for FM, 1e-3 for DB/TB
    z_lr: float = 0.1
    explore_eps: float = 0.0
    hidden_dims: tuple[int, ...] = (256, 256)
    uniform_backward: bool = False
    steps_per_batch: int = 1
    metrics_window: int = 200_000
    cadence: int = 10
    length_checkpoints: tuple[int, ...] = (500, 1000, 1500, 2000, 2500)
    topk: int = 100
    exact_l1: bool = True            # skipped automatically beyond the cap
    enum_cap: int = DEFAULT_ENUM_CAP
    workers: int = 1
    seed: int = 0
    wall_clock: bool = False         # keep metrics.csv byte-stable by default
    evo: EvoConfig | None = field(default_factory=EvoConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.online_ratio <= 1.0:
            raise ConfigError("online_ratio must lie in [0, 1]")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.z_lr <= 0:
            raise ConfigError("z_lr must be positive")
        if self.steps_per_batch < 1:
            raise ConfigError("steps_per_batch must be >= 1")
        if self.cadence < 1:
            raise ConfigError("cadence must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-4 if self.objective is ObjectiveKind.FM else 1e-3

    @property
    def n_online(self) -> int:
        return int(math.ceil(self.online_ratio * self.batch_size - 1e-9))


@dataclass
class MetricsRow:
    step: int
    loss: float
    log_z: float | None
    states_visited: int
    reward_calls: int
    modes_cells: int | None
    modes_regions: int | None
    l1_empirical: float | None
    l1_exact: float | None
    top100: float | None
    buffer_size: int
    wall_ms: float | None

    def csv_line(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)

        return ",".join(
            fmt(v)
            for v in (
                self.step, self.loss, self.log_z, self.states_visited,
                self.reward_calls, self.modes_cells, self.modes_regions,
                self.l1_empirical, self.l1_exact, self.top100,
                self.buffer_size, self.wall_ms,
            )
        )


@dataclass
class RunRecord:
    rows: list[MetricsRow] = field(default_factory=list)
    length_hists: dict[int, Counter] = field(default_factory=dict)
    length_snapshots: dict[int, list[str]] = field(default_factory=dict)
    wall_seconds: float = 0.0

    def csv_lines(self) -> list[str]:
        return [CSV_HEADER] + [r.csv_line() for r in self.rows]

    @property
    def final(self) -> MetricsRow | None:
        return self.rows[-1] if self.rows else None


@dataclass
class RunResult:
    record: RunRecord
    agent: GfnAgent
    population: Population | None
    buffer: ReplayBuffer
    discovered_modes: list
    summary: dict


def length_histograms(
    lengths_by_step: dict[int, list[int]], checkpoints: tuple[int, ...]
) -> dict[int, Counter]:
    """Histogram of trajectory lengths at each requested checkpoint step."""
    return {
        step: Counter(lengths_by_step[step])
        for step in checkpoints
        if step in lengths_by_step
    }


class Trainer:
    def __init__(self, env: Env, cfg: TrainConfig):
        self.env = env
        self.cfg = cfg
        self.agent = make_agent(
            cfg.objective, env, cfg.hidden_dims, rng_stream(cfg.seed, 4),
            uniform_backward=cfg.uniform_backward,
        )
        self.adam = AdamState.fresh(self.agent.params.values.size)
        self.z_adam = AdamState.fresh(1)
        self.buffer = ReplayBuffer(cfg.replay)
        self.population = (
            Population.initial(self.agent, cfg.evo.k, cfg.seed) if cfg.evo else None
        )
        self.record = RunRecord()
        self.step = 0

        self.reward_calls = 0
        self.distinct_visited: set = set()
        self.window: deque = deque()
        self.window_counts: Counter = Counter()
        self.topk = TopKTracker(cfg.topk)
        self.discovered_modes: set = set()
        self.last_loss = math.nan
        self._wall_start = time.monotonic()

        self.truth = self.mode_cells = None
        if env.terminal_count <= cfg.enum_cap:
            self.truth = true_density(env, cfg.enum_cap)
            self.mode_cells = env.mode_set(cfg.enum_cap)
        self.uniform_l1 = uniform_l1(self.truth) if self.truth else None

    # -- bookkeeping -------------------------------------------------------
    def _observe(self, traj: Trajectory) -> None:
        """Account for one fresh trajectory evaluation."""
        self.reward_calls += 1
        x = traj.terminal
        self.distinct_visited.add(x)
        self.topk.add(traj.reward)
        if self.mode_cells is not None and x in self.mode_cells:
            self.discovered_modes.add(x)
        self.window.append(x)
        self.window_counts[x] += 1
        if len(self.window) > self.cfg.metrics_window:
            old = self.window.popleft()
            self.window_counts[old] -= 1
            if not self.window_counts[old]:
                del self.window_counts[old]

    # -- one step ------------------------------------------------------------
    def train_step(self) -> None:
        cfg = self.cfg
        self.step += 1

        if self.population is not None:
            res = evolve_generation(
                self.population, self.env, self.agent, self.buffer, cfg.evo,
                cfg.seed, learner_params=self.agent.params, workers=cfg.workers,
            )
            self.population = res.population
            for traj in res.trajectories:
                self._observe(traj)

        online_rng = rng_stream(cfg.seed, 2, self.step)
        batch: list[Trajectory] = []
        for _ in range(cfg.n_online):
            traj = self.agent.sample_trajectory(self.env, online_rng, cfg.explore_eps)
            self._observe(traj)
            self.buffer.insert(traj)
            batch.append(traj)

        n_offline = cfg.batch_size - cfg.n_online
        if n_offline > 0:
            if len(self.buffer) == 0:
                warnings.warn("replay buffer empty; falling back to all-online batch")
                for _ in range(n_offline):
                    traj = self.agent.sample_trajectory(self.env, online_rng, cfg.explore_eps)
                    self._observe(traj)
                    self.buffer.insert(traj)
                    batch.append(traj)
            else:
                offline_rng = rng_stream(cfg.seed, 3, self.step)
                batch.extend(self.buffer.sample(n_offline, offline_rng))

        for _ in range(cfg.steps_per_batch):
            self._update(batch)

        if self.step in cfg.length_checkpoints:
            self.record.length_hists[self.step] = Counter(len(t) for t in batch)
            self.record.length_snapshots[self.step] = [
                " ".join(str(a) for a in t.actions) + "\t" + repr(t.reward)
                for t in batch
            ]

        if self.step % cfg.cadence == 0 or self.step == cfg.total_steps:
            self.record.rows.append(self._metrics_row())

    def _update(self, batch: list[Trajectory]) -> None:
        cfg = self.cfg
        if cfg.objective is ObjectiveKind.TB:
            report = tb_loss(self.agent, self.env, batch)
        elif cfg.objective is ObjectiveKind.DB:
            report = db_loss(self.agent, self.env, transitions(self.env, batch))
        else:
            report = fm_loss(self.agent, self.env, fm_items(self.env, batch))
        if not math.isfinite(report.mean_loss):
            raise TrainingError(
                f"non-finite loss at step {self.step}",
                diagnostic=self._diagnostic(batch, report.mean_loss),
            )
        try:
            self.agent.params, self.adam = adam_step(
                self.agent.params, report.grad, self.adam, cfg.resolved_lr
            )
        except TrainingError as exc:
            raise TrainingError(
                f"{exc} at step {self.step}", diagnostic=self._diagnostic(batch, report.mean_loss)
            ) from exc
        if report.grad_log_z is not None:
            z_vec = ParamVector(np.array([self.agent.log_z]), (LayerLayout(1, 1, 0),))
            g_vec = ParamVector(np.array([report.grad_log_z]), (LayerLayout(1, 1, 0),))
            z_vec, self.z_adam = adam_step(z_vec, g_vec, self.z_adam, cfg.z_lr)
            self.agent.log_z = float(z_vec.values[0])
        self.last_loss = report.mean_loss

    def _diagnostic(self, batch: list[Trajectory], loss: float) -> str:
        lines = [f"step={self.step} loss={loss!r} objective={self.cfg.objective.value}"]
        for i, t in enumerate(batch):
            lines.append(f"  traj[{i}]: reward={t.reward!r} actions={t.actions}")
        return "\n".join(lines)

    def _metrics_row(self) -> MetricsRow:
        cfg = self.cfg
        l1_emp = l1_ex = None
        if self.truth is not None and self.window:
            l1_emp = empirical_l1(self.window_counts, len(self.window), self.truth)
        if self.truth is not None and cfg.exact_l1 and self.env.state_count <= cfg.enum_cap:
            l1_ex = density_l1(exact_learned_density(self.agent, self.env, cfg.enum_cap),
                               self.truth)
        cells = regions = None
        if self.mode_cells is not None:
            cells = len(self.discovered_modes)
            regions = len({self.env.region_of(x) for x in self.discovered_modes})
        wall = None
        if cfg.wall_clock:
            wall = (time.monotonic() - self._wall_start) * 1000.0
        return MetricsRow(
            step=self.step,
            loss=self.last_loss,
            log_z=self.agent.log_z if cfg.objective is ObjectiveKind.TB else None,
            states_visited=len(self.distinct_visited),
            reward_calls=self.reward_calls,
            modes_cells=cells,
            modes_regions=regions,
            l1_empirical=l1_emp,
            l1_exact=l1_ex,
            top100=self.topk.mean() if self.topk.seen else None,
            buffer_size=len(self.buffer),
            wall_ms=wall,
        )

    def run(self) -> RunResult:
        for _ in range(self.cfg.total_steps):
            self.train_step()
        self.record.wall_seconds = time.monotonic() - self._wall_start
        modes = sorted(self.discovered_modes)
        summary = {
            "steps": self.step,
            "reward_calls": self.reward_calls,
            "states_visited": len(self.distinct_visited),
            "buffer_size": len(self.buffer),
            "uniform_l1": self.uniform_l1,
            "wall_seconds": self.record.wall_seconds,
        }
        final = self.record.final
        if final is not None:
            summary["final"] = {
                "step": final.step,
                "loss": final.loss,
                "log_z": final.log_z,
                "modes_cells": final.modes_cells,
                "modes_regions": final.modes_regions,
                "l1_empirical": final.l1_empirical,
                "l1_exact": final.l1_exact,
                "top100": final.top100,
            }
        return RunResult(
            record=self.record,
            agent=self.agent,
            population=self.population,
            buffer=self.buffer,
            discovered_modes=modes,
            summary=summary,
        )


def run(env: Env, cfg: TrainConfig) -> RunResult:
    """Train from scratch under ``cfg`` and return the full result bundle."""
    return Trainer(env, cfg).run()
