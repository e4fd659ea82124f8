"""Command-line front end: ``run``, ``sweep`` and ``spectral``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

from macts.config import ConfigError, ScenarioConfig, TopologySpec, load_config, parse_override
from macts.graph import SpectralError, TopologyError, spectral_report
from macts.metrics import accuracy_csv, accuracy_table, convergence_csv, convergence_table
from macts.simulator import SimulationError, run_scenario, summary_record

log = logging.getLogger("macts")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
OUT_DIR_ENV = "MACTS_OUT_DIR"
DEFAULT_SWEEP_CAP = 10_000
SWEEP_AXES = ("H_initial", "topology", "seed", "protocol")


def _default_out() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "out"))


def _resolve_config(path: str | None, seed: int | None, sets: list[str]) -> ScenarioConfig:
    cfg = load_config(path) if path else ScenarioConfig()
    overrides = dict(parse_override(s) for s in sets)
    if seed is not None:
        overrides["seed"] = seed
    return cfg.with_overrides(overrides) if overrides else cfg


def _write_json(path: Path, data: dict[str, Any]) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args.config, args.seed, args.set)
    topo = cfg.topology.build()  # fail before touching the output directory
    report = spectral_report(topo, cfg.hops)
    trace = run_scenario(cfg, topo)
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.protocol}_{cfg.topology.label}_H{cfg.hops}_seed{cfg.seed}"
    trace_path = out / f"{stem}_trace.csv"
    summary_path = out / f"{stem}_summary.json"
    trace.write_csv(trace_path)
    _write_json(summary_path, summary_record(trace, report.as_record()))

    conv = trace.convergence_time_s
    print(f"topology: {cfg.topology.label} ({topo.n} nodes), protocol={cfg.protocol}, H={cfg.hops}")
    if conv is None:
        print(f"convergence: not reached within {cfg.sim_duration_s:g} s")
    else:
        print(f"convergence: {conv:.1f} s ({conv / 60:.2f} min), "
              f"messages at convergence: {trace.messages_at_convergence}")
    print(f"lambda2: union={report.lambda2_union:.6g} lower_bound={report.lower_bound:.6g} "
          f"upper_bound={report.upper_bound:.6g}")
    print(f"trace: {trace_path}")
    print(f"summary: {summary_path}")
    return EXIT_OK


def _run_one(cfg_json: str) -> tuple[str, Any]:
    cfg = ScenarioConfig.from_dict(json.loads(cfg_json))
    try:
        return "ok", run_scenario(cfg)
    except (TopologyError, SimulationError, ConfigError, SpectralError) as exc:
        return "error", f"{type(exc).__name__}: {exc}"


def load_sweep(path: str) -> tuple[ScenarioConfig, dict[str, list[Any]], dict[str, Any]]:
    p = Path(path)
    try:
        spec = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"sweep spec not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(spec, dict):
        raise ConfigError("sweep spec must be a JSON object")
    base_data = spec.get("base", {})
    if isinstance(base_data, str):
        base = load_config(p.parent / base_data)
    else:
        base = ScenarioConfig.from_dict(base_data)
    axes = spec.get("axes")
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep spec needs a non-empty 'axes' object")
    for name, values in axes.items():
        if name not in SWEEP_AXES:
            raise ConfigError(f"unsupported sweep axis {name!r}; use {', '.join(SWEEP_AXES)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {name!r} must be a non-empty list")
    return base, axes, spec


def expand_sweep(base: ScenarioConfig, axes: dict[str, list[Any]], cap: int) -> list[ScenarioConfig]:
    names = sorted(axes)
    total = 1
    for n in names:
        total *= len(axes[n])
    if total > cap:
        raise ConfigError(f"sweep has {total} runs, above the cap of {cap}")
    configs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        data = base.to_dict()
        for name, value in zip(names, combo):
            if name == "topology":
                data["topology"] = (
                    TopologySpec.parse(value).__dict__ if isinstance(value, str) else value
                )
            else:
                data[name] = value
        configs.append(ScenarioConfig.from_dict(data))
    return configs


def cmd_sweep(args: argparse.Namespace) -> int:
    base, axes, spec = load_sweep(args.spec)
    configs = expand_sweep(base, axes, int(spec.get("max_runs", DEFAULT_SWEEP_CAP)))
    out = Path(args.out or spec.get("out") or _default_out())
    workers = int(args.workers or spec.get("workers", 1))
    out.mkdir(parents=True, exist_ok=True)

    payloads = [c.to_json() for c in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, payloads))
    else:
        results = [_run_one(p) for p in payloads]

    traces = []
    failures = []
    for cfg, (status, value) in zip(configs, results):
        stem = f"{cfg.protocol}_{cfg.topology.label}_H{cfg.hops}_seed{cfg.seed}"
        if status == "ok":
            traces.append(value)
            value.write_csv(out / f"{stem}_trace.csv")
            _write_json(out / f"{stem}_summary.json", summary_record(value))
        else:
            failures.append((stem, value))
            log.error("run %s failed: %s", stem, value)

    header = f"# sweep={json.dumps(spec, sort_keys=True, separators=(',', ':'))}\n"
    rows = convergence_table(traces, min_runs=1)
    (out / "convergence.csv").write_text(header + convergence_csv(rows))
    (out / "accuracy.csv").write_text(header + accuracy_csv(accuracy_table(traces)))
    if failures:
        (out / "failures.txt").write_text("".join(f"{s}\t{m}\n" for s, m in failures))
    print(convergence_csv(rows), end="")
    print(f"{len(traces)} runs ok, {len(failures)} failed; outputs in {out}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_spectral(args: argparse.Namespace) -> int:
    if args.topology:
        spec = TopologySpec.parse(args.topology)
    else:
        spec = _resolve_config(args.config, None, args.set).topology
    topo = spec.build()
    print("H,lambda2_union,lower_bound,upper_bound")
    for h in range(1, args.h_max + 1):
        r = spectral_report(topo, h)
        print(f"{h},{r.lambda2_union:.12g},{r.lower_bound:.12g},{r.upper_bound:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", help="scenario JSON file (defaults when omitted)")
    run.add_argument("--seed", type=int)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key; dotted keys reach nested values")
    run.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a grid of scenarios and aggregate")
    sweep.add_argument("spec", help="sweep spec JSON file")
    sweep.add_argument("--out")
    sweep.add_argument("--workers", type=int)
    sweep.set_defaults(func=cmd_sweep)

    spectral = sub.add_parser("spectral", help="algebraic connectivity per hop depth")
    spectral.add_argument("--topology", help="grid:RxC, line:N, random:N:R:SEED or file:PATH")
    spectral.add_argument("--config")
    spectral.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    spectral.add_argument("--h-max", type=int, default=4)
    spectral.set_defaults(func=cmd_spectral)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, SpectralError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
