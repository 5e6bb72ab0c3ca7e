"""Run configuration: one JSON document, strict keys, defaults echoed back.

Sections: env, objective, train, evo, replay, output, seed.  Unknown keys
are rejected anywhere in the tree.  ``resolve`` returns both the constructed
objects and a fully-expanded copy of the configuration with every default
made explicit, which the CLI writes into the run summary.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from typing import Any

from .envs import Env, HypergridEnv, SeqEnv, load_reward_table
from .errors import ConfigError
from .evolution import EvoConfig
from .replay import ReplayConfig
from .trainer import TrainConfig

_ENV_KEYS = {
    "hypergrid": {"type", "D", "H", "r0", "r1", "r2"},
    "sequence": {"type", "alphabet", "L", "table_path", "beta"},
}
_TRAIN_KEYS = {
    "total_steps", "batch_size", "online_ratio", "lr", "z_lr", "explore_eps",
    "hidden_dims", "uniform_backward", "steps_per_batch", "metrics_window",
    "topk", "exact_l1", "enum_cap", "workers",
}
_EVO_KEYS = {
    "disabled", "k", "eval_episodes", "elite_frac", "mutation_strength",
    "p_mutation", "row_mut_frac", "sync_period", "selection", "tournament_size",
}
_REPLAY_KEYS = {"capacity", "priority_percentile", "priority_split"}
_OUTPUT_KEYS = {"dir", "cadence", "buffer_snapshot", "length_checkpoints", "wall_clock"}
_TOP_KEYS = {"env", "objective", "train", "evo", "replay", "output", "seed"}

OUTPUT_ROOT_VAR = "EVOFLOW_OUTPUT_ROOT"


@dataclass
class RunSetup:
    env: Env
    train: TrainConfig
    output_dir: str
    buffer_snapshot: bool
    resolved: dict


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def parse_override(text: str) -> tuple[list[str], Any]:
    """'a.b.c=value' with the value parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_override(doc: dict, path: list[str], value: Any) -> None:
    node = doc
    for part in path[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[path[-1]] = value


def _reject_unknown(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {where}.{sorted(unknown)[0]}")


def _require(section: dict, key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"missing required field {where}.{key}")
    return section[key]


def resolve(doc: dict) -> RunSetup:
    """Validate a config document and construct the run objects."""
    doc = copy.deepcopy(doc)
    _reject_unknown(doc, _TOP_KEYS, "config")

    env_sec = _require(doc, "env", "config")
    env_type = _require(env_sec, "type", "env")
    if env_type not in _ENV_KEYS:
        raise ConfigError(f"env.type must be 'hypergrid' or 'sequence', got {env_type!r}")
    _reject_unknown(env_sec, _ENV_KEYS[env_type], "env")

    if env_type == "hypergrid":
        env = HypergridEnv(
            dims=int(_require(env_sec, "D", "env")),
            horizon=int(_require(env_sec, "H", "env")),
            r0=float(_require(env_sec, "r0", "env")),
            r1=float(env_sec.get("r1", 0.5)),
            r2=float(env_sec.get("r2", 2.0)),
        )
        env_resolved = {
            "type": "hypergrid", "D": env.dims, "H": env.horizon,
            "r0": env.r0, "r1": env.r1, "r2": env.r2,
        }
    else:
        alphabet = _require(env_sec, "alphabet", "env")
        if isinstance(alphabet, str):
            alphabet = tuple(alphabet)
        table_path = _require(env_sec, "table_path", "env")
        env = SeqEnv(
            alphabet=tuple(alphabet),
            length=int(_require(env_sec, "L", "env")),
            reward_table=load_reward_table(str(table_path)),
            beta=float(env_sec.get("beta", 3.0)),
        )
        env_resolved = {
            "type": "sequence", "alphabet": list(env.alphabet), "L": env.length,
            "table_path": str(table_path), "beta": env.beta,
        }

    objective = str(doc.get("objective", "TB")).upper()

    evo_sec = dict(doc.get("evo", {}))
    _reject_unknown(evo_sec, _EVO_KEYS, "evo")
    disabled = bool(evo_sec.pop("disabled", False))
    evo = None if disabled else EvoConfig(**evo_sec)

    replay_sec = dict(doc.get("replay", {}))
    _reject_unknown(replay_sec, _REPLAY_KEYS, "replay")
    replay = ReplayConfig(**replay_sec)

    train_sec = dict(doc.get("train", {}))
    _reject_unknown(train_sec, _TRAIN_KEYS, "train")
    if "hidden_dims" in train_sec:
        train_sec["hidden_dims"] = tuple(int(h) for h in train_sec["hidden_dims"])

    output_sec = dict(doc.get("output", {}))
    _reject_unknown(output_sec, _OUTPUT_KEYS, "output")
    cadence = int(output_sec.get("cadence", 10))
    checkpoints = tuple(int(c) for c in output_sec.get(
        "length_checkpoints", (500, 1000, 1500, 2000, 2500)))
    wall_clock = bool(output_sec.get("wall_clock", False))
    buffer_snapshot = bool(output_sec.get("buffer_snapshot", True))

    seed = int(doc.get("seed", 0))
    try:
        train = TrainConfig(
            objective=objective,
            seed=seed,
            cadence=cadence,
            length_checkpoints=checkpoints,
            wall_clock=wall_clock,
            evo=evo,
            replay=replay,
            **train_sec,
        )
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from None

    out_dir = str(output_sec.get("dir", "out"))
    root = os.environ.get(OUTPUT_ROOT_VAR)
    if root and not os.path.isabs(out_dir):
        out_dir = os.path.join(root, out_dir)

    resolved = {
        "env": env_resolved,
        "objective": train.objective.value,
        "train": {
            "total_steps": train.total_steps,
            "batch_size": train.batch_size,
            "online_ratio": train.online_ratio,
            "lr": train.resolved_lr,
            "z_lr": train.z_lr,
            "explore_eps": train.explore_eps,
            "hidden_dims": list(train.hidden_dims),
            "uniform_backward": train.uniform_backward,
            "steps_per_batch": train.steps_per_batch,
            "metrics_window": train.metrics_window,
            "topk": train.topk,
            "exact_l1": train.exact_l1,
            "enum_cap": train.enum_cap,
            "workers": train.workers,
        },
        "evo": {"disabled": True} if evo is None else {
            "disabled": False,
            "k": evo.k,
            "eval_episodes": evo.eval_episodes,
            "elite_frac": evo.elite_frac,
            "mutation_strength": evo.mutation_strength,
            "p_mutation": evo.p_mutation,
            "row_mut_frac": evo.row_mut_frac,
            "sync_period": evo.sync_period,
            "selection": evo.selection,
            "tournament_size": evo.tournament_size,
        },
        "replay": {
            "capacity": replay.capacity,
            "priority_percentile": replay.priority_percentile,
            "priority_split": replay.priority_split,
        },
        "output": {
            "dir": out_dir,
            "cadence": cadence,
            "buffer_snapshot": buffer_snapshot,
            "length_checkpoints": list(checkpoints),
            "wall_clock": wall_clock,
        },
        "seed": seed,
    }
    return RunSetup(env, train, out_dir, buffer_snapshot, resolved)
