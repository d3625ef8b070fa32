"""Command-line front end: run, sweep, compare, gen-topology."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .sim import (
    SimConfig,
    build_topology,
    compare,
    run_simulation,
    sweep,
    write_metrics_csv,
    write_summary_json,
    write_sweep_csv,
)
from .topology import ConfigurationError


def _load_config(args) -> SimConfig:
    config = SimConfig.from_json_file(args.config) if args.config else SimConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "scheduler", None) is not None:
        overrides["scheduler"] = args.scheduler
    if getattr(args, "slots", None) is not None:
        overrides["slots"] = args.slots
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in SimConfig.__dataclass_fields__:
            raise ConfigurationError(f"unknown config key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key] = tuple(value) if isinstance(value, list) else value
    return config.override(**overrides) if overrides else config


def _out_dir(config: SimConfig) -> str:
    out = config.out or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file (defaults used when omitted)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--scheduler", help="scheduler override")
    parser.add_argument("--slots", type=int, help="horizon override")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override any config field (value parsed as JSON when possible)",
    )


def cmd_run(args) -> int:
    config = _load_config(args)
    result = run_simulation(config)
    out = _out_dir(config)
    write_metrics_csv(result, os.path.join(out, "metrics.csv"))
    write_summary_json(result.summary, os.path.join(out, "summary.json"))
    print(f"wrote {out}/metrics.csv and {out}/summary.json")
    print(
        f"scheduler={config.scheduler} slots={config.slots} "
        f"avg_queue={result.summary['time_avg_total_queue']:.3f} "
        f"avg_power={result.summary['time_avg_power']:.3f} "
        f"stable={result.summary['stable']}"
    )
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    rows = sweep(config, args.param, values, replicates=args.replicates)
    out = _out_dir(config)
    write_sweep_csv(rows, os.path.join(out, "sweep.csv"))
    with open(os.path.join(out, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out}/sweep.csv and {out}/sweep.json")
    for row in rows:
        print(
            f"{args.param}={row['value']}: avg_queue={row['time_avg_total_queue']:.3f} "
            f"avg_power={row['time_avg_power']:.3f} stable={row['stable_fraction']:.2f}"
        )
    return 0


def cmd_compare(args) -> int:
    config = _load_config(args)
    name_a, _, name_b = args.schedulers.partition(",")
    name_a, name_b = name_a.strip(), name_b.strip()
    if not name_a or not name_b:
        raise ConfigurationError("--schedulers expects two comma-separated names")
    report, result_a, result_b = compare(config, name_a, name_b)
    out = _out_dir(config)
    for tag, result in (("a", result_a), ("b", result_b)):
        os.makedirs(os.path.join(out, tag), exist_ok=True)
        write_metrics_csv(result, os.path.join(out, tag, "metrics.csv"))
        write_summary_json(result.summary, os.path.join(out, tag, "summary.json"))
    write_summary_json(report, os.path.join(out, "compare.json"))
    print(f"wrote {out}/compare.json (plus per-scheduler metrics under {out}/a and {out}/b)")
    print(
        f"{name_a} vs {name_b}: mean utility ratio "
        f"{report['mean_utility_ratio']:.4f} over {report['ratio_slots']} slots"
    )
    return 0


def cmd_gen_topology(args) -> int:
    config = _load_config(args)
    topo = build_topology(config)
    path = args.out_file or os.path.join(_out_dir(config), "topology.json")
    topo.to_json(path)
    print(f"wrote {path} ({topo.n_nodes} nodes, {topo.n_users} users)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cachesched",
        description="Link scheduling and power allocation simulator for wireless caching networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scheduler on one scenario")
    _add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat a run over parameter values")
    _add_common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         choices=("power_weight", "max_arrivals", "delay_threshold"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--replicates", type=int, default=1)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="two schedulers on a shared topology and seed")
    _add_common(p_cmp)
    p_cmp.add_argument("--schedulers", required=True, metavar="A,B")
    p_cmp.set_defaults(fn=cmd_compare)

    p_gen = sub.add_parser("gen-topology", help="emit a replayable scenario JSON")
    _add_common(p_gen)
    p_gen.add_argument("--out-file", help="topology JSON path")
    p_gen.set_defaults(fn=cmd_gen_topology)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
