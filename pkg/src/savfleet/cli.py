"""Command line entry point: ``python -m savfleet {run,report,verify}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from savfleet import experiment as ex
from savfleet.policies import FOUR_NEAREST, MODES


def _key_value(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="savfleet", description="Fleet relocation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train agents and write CSV series, summaries and plots")
    run.add_argument("--agent", default="dqn", choices=[*ex.AGENT_KINDS, "all"],
                     help="agent kind, or 'all' for every kind")
    run.add_argument("--action-space", default=FOUR_NEAREST, choices=[*MODES, "both"])
    run.add_argument("--preset", default="desk", choices=sorted(ex.PRESETS),
                     help="desk: 30 iterations; full: 100 iterations (default: desk)")
    run.add_argument("--iterations", type=int, help="weekly iterations per run (overrides the preset)")
    run.add_argument("--runs", type=int, help="independent runs per agent (default 2)")
    run.add_argument("--seed", type=int, default=0, help="first seed; run k uses seed + k")
    run.add_argument("--scenario", help="key = value scenario file describing the zone grid")
    run.add_argument("--config", help="key = value file of config overrides")
    run.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                     metavar="KEY=VALUE", help="config override, e.g. agent.eta=0.01 or sim.fleet_size=80")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--trace", action="store_true", help="write a per-hour trace of each run's last week")
    run.add_argument("--aggregate", choices=ex.AGGREGATES, default="mean",
                     help="iteration reward: mean (default) or sum of hourly rewards")
    run.add_argument("--workers", type=int, default=1, help="processes for independent runs")

    report = sub.add_parser("report", help="rebuild summaries and plots from stored run CSVs")
    report.add_argument("--out", default="results")
    report.add_argument("--aggregate", choices=ex.AGGREGATES, default="mean",
                        help="aggregation named in the summaries (must match the stored runs)")

    verify = sub.add_parser("verify", help="run the acceptance checks")
    verify.add_argument("--quick", action="store_true", help="skip the slow simulation experiments")
    verify.add_argument("--only", type=int, action="append", help="run only this criterion (repeatable)")
    verify.add_argument("--out", help="directory for the reports written by the checks")
    return parser


def resolve_configs(args) -> list[ex.ExperimentConfig]:
    agents = ex.AGENT_KINDS if args.agent == "all" else (args.agent,)
    modes = MODES if args.action_space == "both" else (args.action_space,)
    file_pairs = ex.read_config_file(args.config) if args.config else []
    configs = []
    for agent in agents:
        for mode in modes:
            cfg = ex.PRESETS[args.preset](agent, mode)
            cfg = ex.apply_overrides(cfg, file_pairs + list(args.overrides))
            runs = args.runs or cfg.runs
            seeds = [args.seed + k for k in range(runs)]
            changes = dict(runs=runs, seeds=seeds, out=args.out, aggregate=args.aggregate,
                           scenario=args.scenario, trace=args.trace)
            if args.iterations:
                changes["iterations"] = args.iterations
            configs.append(dataclasses.replace(cfg, **changes))
    return configs


def cmd_run(args) -> int:
    configs = resolve_configs(args)
    for cfg in configs:
        problems = cfg.validate()
        if problems:
            print(f"error: {cfg.label}: " + "; ".join(problems), file=sys.stderr)
            return 2
    for cfg in configs:
        t0 = time.perf_counter()
        runs = ex.run_experiment(cfg, workers=args.workers)
        series = ex.max_of_runs(runs)
        print(f"{cfg.label}: {cfg.runs} run(s) x {cfg.iterations} iterations, "
              f"final-5 mean {ex.final_mean(series):.3f} ({time.perf_counter() - t0:.1f} s)")
    for path in ex.report_from_runs(args.out, args.aggregate):
        print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    try:
        paths = ex.report_from_runs(args.out, args.aggregate)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    from savfleet import acceptance

    numbers = tuple(args.only) if args.only else acceptance.ALL
    if args.quick and not args.only:
        numbers = acceptance.FAST
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    results = acceptance.run_checks(numbers, args.out, experiments=not args.quick)
    failed = [r for r in results if r.gated and not r.passed]
    print(f"{len(results) - len(failed)} of {len(results)} lines passed or informational; {len(failed)} failed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "report":
        return cmd_report(args)
    return cmd_verify(args)


if __name__ == "__main__":
    raise SystemExit(main())
