"""Command-line entry point: train, sweep, oracle.

Exit codes: 0 success, 1 sweep had failing cells, 2 invalid configuration,
3 training aborted on a non-finite loss, 4 exhaustive oracle unavailable.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunSetup, apply_override, load_config, parse_override, resolve
from .envs import HypergridEnv
from .errors import ConfigError, EvoflowError, OracleUnavailableError, TableParseError, TrainingError
from .oracle import exact_edge_flows, true_density
from .trainer import RunResult, Trainer

EXIT_OK = 0
EXIT_SWEEP_FAILURES = 1
EXIT_CONFIG = 2
EXIT_NAN_ABORT = 3
EXIT_ORACLE = 4

PARAMS_MAGIC = "evoflow-params-v1"


def _state_str(s) -> str:
    if isinstance(s, tuple):
        return "|".join(str(c) for c in s)
    return str(s)


def write_params(path: str, result: RunResult) -> None:
    """Header line of JSON metadata, then raw little-endian float64 values."""
    agent = result.agent
    header = {
        "format": PARAMS_MAGIC,
        "layers": [[l.rows, l.cols, l.offset] for l in agent.params.layouts],
        "count": int(agent.params.values.size),
        "objective": agent.kind.value,
        "log_z": agent.log_z if agent.kind.value == "TB" else None,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(agent.params.values.astype("<f8").tobytes())


def read_params(path: str) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != PARAMS_MAGIC:
            raise ConfigError(f"{path} is not a {PARAMS_MAGIC} file")
        values = np.frombuffer(fh.read(), dtype="<f8")
    if values.size != header["count"]:
        raise ConfigError(f"{path}: expected {header['count']} values, got {values.size}")
    return header, values


def _setup_from_args(args) -> RunSetup:
    doc = load_config(args.config)
    for text in args.override or []:
        path, value = parse_override(text)
        apply_override(doc, path, value)
    if args.seed is not None:
        doc["seed"] = args.seed
    if getattr(args, "output_dir", None):
        doc.setdefault("output", {})["dir"] = args.output_dir
    return resolve(doc)


def _write_run_outputs(setup: RunSetup, result: RunResult) -> None:
    out = setup.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(result.record.csv_lines()) + "\n")
    summary = {
        "version": __version__,
        "config": setup.resolved,
        "discovered_modes": [_state_str(m) for m in result.discovered_modes],
        **result.summary,
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_params(os.path.join(out, "final_params.bin"), result)
    if setup.buffer_snapshot:
        result.buffer.save_snapshot(os.path.join(out, "buffer_snapshot.txt"))
    for step, lines in result.record.length_snapshots.items():
        path = os.path.join(out, f"batch_lengths_{step}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))


def cmd_train(args) -> int:
    setup = _setup_from_args(args)
    result = Trainer(setup.env, setup.train).run()
    _write_run_outputs(setup, result)
    final = result.record.final
    if final is not None:
        print(f"done: {final.step} steps, loss={final.loss:.6g}, "
              f"modes={final.modes_cells}, out={setup.output_dir}")
    else:
        print(f"done: 0 steps, out={setup.output_dir}")
    return EXIT_OK


NUMERIC_FIELDS = (
    "loss", "log_z", "states_visited", "reward_calls", "modes_cells",
    "modes_regions", "l1_empirical", "l1_exact", "top100", "buffer_size",
)


def _parse_grid(entries: list[str]) -> list[tuple[str, list]]:
    grid = []
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"grid entry {entry!r} must look like key=v1,v2,...")
        key, values = entry.split("=", 1)
        parsed = []
        for raw in values.split(","):
            try:
                parsed.append(json.loads(raw))
            except json.JSONDecodeError:
                parsed.append(raw)
        if not parsed:
            raise ConfigError(f"grid entry {entry!r} has no values")
        grid.append((key.strip(), parsed))
    return grid


def cmd_sweep(args) -> int:
    base_doc = load_config(args.config)
    for text in args.override or []:
        path, value = parse_override(text)
        apply_override(base_doc, path, value)
    grid = _parse_grid(args.grid or [])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]
    out_root = args.output_dir or "sweep_out"
    root = os.environ.get("EVOFLOW_OUTPUT_ROOT")
    if root and not os.path.isabs(out_root):
        out_root = os.path.join(root, out_root)
    os.makedirs(out_root, exist_ok=True)

    keys = [k for k, _ in grid]
    cells = list(itertools.product(*[v for _, v in grid])) if grid else [()]
    aggregate_rows = []
    failures = 0
    for cell in cells:
        cell_id = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, cell)) or "base"
        finals = []
        status = "ok"
        message = ""
        for seed in seeds:
            doc = json.loads(json.dumps(base_doc))
            for key, value in zip(keys, cell):
                apply_override(doc, [p for p in key.split(".") if p], value)
            doc["seed"] = seed
            doc.setdefault("output", {})["dir"] = os.path.join(
                out_root, f"{cell_id}_seed={seed}")
            try:
                setup = resolve(doc)
                result = Trainer(setup.env, setup.train).run()
                _write_run_outputs(setup, result)
                finals.append(result.record.final)
            except EvoflowError as exc:
                failures += 1
                status = "error"
                message = str(exc)
                print(f"cell {cell_id} seed {seed} failed: {exc}", file=sys.stderr)
        row = {"cell": cell_id, "seeds": ",".join(str(s) for s in seeds),
               "status": status, "message": message}
        for k, v in zip(keys, cell):
            row[k] = v
        for name in NUMERIC_FIELDS:
            vals = [getattr(f, name) for f in finals if f is not None]
            vals = [v for v in vals if v is not None]
            if vals:
                row[f"mean_{name}"] = float(np.mean(vals))
                row[f"var_{name}"] = float(np.var(vals))
            else:
                row[f"mean_{name}"] = row[f"var_{name}"] = ""
        aggregate_rows.append(row)

    aggregate_rows.sort(key=lambda r: r["cell"])
    columns = ["cell", *keys, "seeds", "status", "message"]
    for name in NUMERIC_FIELDS:
        columns += [f"mean_{name}", f"var_{name}"]
    with open(os.path.join(out_root, "aggregate.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(aggregate_rows)
    print(f"sweep: {len(cells)} cells x {len(seeds)} seeds, "
          f"{failures} failures, out={out_root}")
    return EXIT_SWEEP_FAILURES if failures else EXIT_OK


def cmd_oracle(args) -> int:
    setup = _setup_from_args(args)
    env = setup.env
    out = setup.output_dir
    os.makedirs(out, exist_ok=True)
    cap = setup.train.enum_cap

    density = true_density(env, cap)
    with open(os.path.join(out, "density.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("state,reward,probability\n")
        for x in env.enumerate_terminals(cap):
            fh.write(f"{_state_str(x)},{env.reward(x)!r},{density.probs[x]!r}\n")

    modes = sorted(env.mode_set(cap))
    with open(os.path.join(out, "modes.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("state,region\n")
        for x in modes:
            region = env.region_of(x)
            region_str = ("".join("+" if hi else "-" for hi in region)
                          if isinstance(env, HypergridEnv) else _state_str(region))
            fh.write(f"{_state_str(x)},{region_str}\n")

    flows = exact_edge_flows(env, cap)
    with open(os.path.join(out, "edge_flows.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("state,action,flow\n")
        for (s, a), f in sorted(flows.edge_flows.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
            fh.write(f"{_state_str(s)},{a},{f!r}\n")
    with open(os.path.join(out, "state_flows.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("state,flow\n")
        for s, f in sorted(flows.state_flows.items(), key=lambda kv: str(kv[0])):
            fh.write(f"{_state_str(s)},{f!r}\n")

    residual = flows.balance_residual(env)
    print(f"oracle: {len(density.probs)} terminals, {len(modes)} modes, "
          f"Z={density.z!r}, balance residual={residual:.3g}, out={out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoflow",
        description="Train amortized flow-network samplers with an evolutionary assist.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--output-dir", default=None, help="override output.dir")

    p_train = sub.add_parser("train", help="run one training job")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="cartesian sweep over config values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--override", action="append", metavar="KEY=VALUE")
    p_sweep.add_argument("--grid", action="append", metavar="KEY=V1,V2,...",
                         help="sweep axis, repeatable; cells are the product")
    p_sweep.add_argument("--seeds", default=None, help="comma-separated seeds")
    p_sweep.add_argument("--output-dir", default=None)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_oracle = sub.add_parser("oracle", help="dump exact density, modes, and flows")
    common(p_oracle)
    p_oracle.set_defaults(fn=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TableParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        if exc.diagnostic:
            print(exc.diagnostic, file=sys.stderr)
        return EXIT_NAN_ABORT
    except OracleUnavailableError as exc:
        print(f"oracle unavailable: {exc}", file=sys.stderr)
        return EXIT_ORACLE


def entry() -> None:
    sys.exit(main())
