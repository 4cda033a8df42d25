"""Command-line harness: run scenarios, sweep parameter grids, check the
model's safety properties, list bundled scenarios.

Exit codes: 0 ok, 2 config error, 3 property/checker violation, 4 scenario
error. Flags override config-file values; FPRSIM_OUT sets the default
output directory.
"""
from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from pathlib import Path

from .engine import CostModel, ScenarioError
from .fpr import ContextScheme
from .metrics import csv_header
from .workloads import DEFAULT_PARAMS, DEVICES, SCENARIOS, run_scenario
from . import checks

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3
EXIT_SCENARIO = 4


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "scenario": "case1",
    "params": {},
    "label": "",
    "fpr": {
        "enabled": True,
        "scheme": "per-process",
        "va_iteration": None,
        "tracking_hooks": True,
    },
    "cost_model": {},
    "device": "nullblk",
    "memory_frames": 4096,
    "limit_ticks": 5_000_000,
    "limit_events": None,
    "seed": 1,
    "repeat": 1,
    "trace": False,
    "out_dir": None,
    "grid": {},
}


def _check_keys(section: dict, allowed: dict, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}{key!r}")


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is None:
        return config
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} line {exc.lineno}: {exc.msg}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    _check_keys(user, DEFAULT_CONFIG, "")
    for key, value in user.items():
        if key == "fpr":
            if not isinstance(value, dict):
                raise ConfigError("fpr section must be an object")
            _check_keys(value, DEFAULT_CONFIG["fpr"], "fpr.")
            config["fpr"].update(value)
        elif key in ("params", "cost_model", "grid"):
            if not isinstance(value, dict):
                raise ConfigError(f"{key} section must be an object")
            config[key] = value
        else:
            config[key] = value
    return config


def apply_flag_overrides(config: dict, args) -> None:
    if args.seed is not None:
        config["seed"] = args.seed
    if getattr(args, "fpr", None):
        config["fpr"]["enabled"] = args.fpr == "on"
    if getattr(args, "scheme", None):
        config["fpr"]["scheme"] = args.scheme
    if getattr(args, "va_iteration", None):
        config["fpr"]["va_iteration"] = args.va_iteration == "on"
    if getattr(args, "device", None):
        config["device"] = args.device
    if args.out:
        config["out_dir"] = args.out
    if getattr(args, "trace", False):
        config["trace"] = True


def _validate(config: dict) -> None:
    if config["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {config['scenario']!r}; "
                          f"choose from {sorted(SCENARIOS)}")
    scheme = config["fpr"]["scheme"]
    if scheme not in [s.value for s in ContextScheme]:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if config["device"] not in DEVICES:
        raise ConfigError(f"unknown device {config['device']!r}")
    if not isinstance(config["seed"], int) or config["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(config["repeat"], int) or config["repeat"] < 1:
        raise ConfigError("repeat must be >= 1")
    params = config["params"]
    for key in ("cf", "pg", "n", "m", "threads", "loops", "procs"):
        if key in params and params[key] is not None and params[key] < 0:
            raise ConfigError(f"params.{key} must be >= 0")


def build_scenario(config: dict, seed: int | None = None):
    name = config["scenario"]
    _desc, builder = SCENARIOS[name]
    params = dict(DEFAULT_PARAMS.get(name, {}))
    params.update(config["params"])
    params.update(
        fpr=config["fpr"]["enabled"],
        scheme=ContextScheme(config["fpr"]["scheme"]),
        va_iteration=config["fpr"]["va_iteration"],
        tracking_hooks=config["fpr"]["tracking_hooks"],
        seed=config["seed"] if seed is None else seed,
        limit_ticks=config["limit_ticks"],
        limit_events=config["limit_events"],
        label=config["label"],
    )
    params["device"] = config["device"]
    if name == "eviction":
        params.setdefault("memory_frames", config["memory_frames"])
    else:
        params["memory_frames"] = config["memory_frames"]
    try:
        return builder(params)
    except TypeError as exc:
        raise ConfigError(f"bad params for scenario {name}: {exc}")


def _out_dir(config: dict) -> Path:
    out = config.get("out_dir") or os.environ.get("FPRSIM_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _costs(config: dict) -> CostModel:
    try:
        return CostModel().with_overrides(config["cost_model"])
    except ScenarioError as exc:
        raise ConfigError(str(exc))


def cmd_run(args) -> int:
    config = load_config(args.config)
    apply_flag_overrides(config, args)
    _validate(config)
    costs = _costs(config)
    out = _out_dir(config)
    rows = []
    summaries = []
    worst = EXIT_OK
    for i in range(config["repeat"]):
        scenario = build_scenario(config, seed=config["seed"] + i)
        record, sim = run_scenario(scenario, costs, trace=config["trace"])
        rows.append(record.csv_row())
        summary = {
            "config": {k: v for k, v in config.items() if k != "grid"},
            "record": record.csv_values(),
            "per_thread": [
                {"name": a.name, "kind": a.kind, "core": a.core,
                 "io_ops": a.io_ops, "compute_ops": a.compute_ops}
                for a in sim.actors
            ],
            "violations": [vars(v) for v in sim.machine.checker.violations],
        }
        summaries.append(summary)
        if config["trace"]:
            (out / "run.trace").write_text("\n".join(sim.engine.trace_lines) + "\n")
        m = sim.machine.metrics
        if m.security_violations or m.aba_violations:
            worst = EXIT_VIOLATION
    (out / "run.csv").write_text(csv_header() + "\n" + "\n".join(rows) + "\n")
    (out / "run.json").write_text(json.dumps(summaries, indent=2) + "\n")
    for row in rows:
        print(row)
    print(f"wrote {out / 'run.csv'}")
    return worst


def _set_path(config: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"grid key {dotted!r} does not name a config field")
        node = node[part]
    if parts[-1] not in node and parts[0] != "params":
        raise ConfigError(f"grid key {dotted!r} does not name a config field")
    node[parts[-1]] = value


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    apply_flag_overrides(base, args)
    grid = base.get("grid") or {}
    keys = list(grid.keys())
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key} must be a non-empty list")
    out = _out_dir(base)
    rows = []
    failures = []
    combos = itertools.product(*(grid[k] for k in keys)) if keys else iter(())
    for combo in combos:
        config = json.loads(json.dumps(base))
        for key, value in zip(keys, combo):
            _set_path(config, key, value)
        try:
            _validate(config)
            costs = _costs(config)
            for i in range(config["repeat"]):
                scenario = build_scenario(config, seed=config["seed"] + i)
                record, _sim = run_scenario(scenario, costs)
                rows.append(record.csv_row())
        except (ConfigError, ScenarioError) as exc:
            failures.append((dict(zip(keys, combo)), str(exc)))
    path = out / "sweep.csv"
    path.write_text(csv_header() + "\n" + "".join(r + "\n" for r in rows))
    print(f"wrote {path} ({len(rows)} rows, {len(failures)} failed)")
    for combo, err in failures:
        print(f"failed {combo}: {err}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_SCENARIO


def cmd_check(args) -> int:
    config = load_config(args.config)
    apply_flag_overrides(config, args)
    results = checks.run_all(seed=config["seed"], quick=args.quick)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    return EXIT_OK if failed == 0 else EXIT_VIOLATION


def cmd_list_scenarios(_args) -> int:
    for name in sorted(SCENARIOS):
        desc, _ = SCENARIOS[name]
        defaults = DEFAULT_PARAMS.get(name, {})
        print(f"{name:14s} {desc}  defaults={defaults}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fprsim",
        description="Deterministic multicore virtual-memory simulator with "
                    "fast-page-recycling shootdown avoidance.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_run_flags=True):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", metavar="DIR", help="output directory "
                       "(default $FPRSIM_OUT or ./out)")
        if with_run_flags:
            p.add_argument("--fpr", choices=["on", "off"])
            p.add_argument("--scheme", choices=[s.value for s in ContextScheme])
            p.add_argument("--va-iteration", dest="va_iteration",
                           choices=["on", "off"])
            p.add_argument("--device", choices=sorted(DEVICES))
            p.add_argument("--trace", action="store_true",
                           help="write a tick/core/event trace file")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the config's parameter grid")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="run the safety property suites")
    common(p_check, with_run_flags=False)
    p_check.add_argument("--quick", action="store_true",
                         help="smaller budgets for the randomized suites")
    p_check.set_defaults(func=cmd_check)

    p_list = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p_list.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
