"""``safelearn`` command line: simulate, montecarlo, verify and field-demo.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import artifacts
from .config import load_field, load_scenario
from .errors import ConfigError
from .field_demo import run_field_demo
from .oracles import SUITES, run_suite
from .scenario import UNFILTERED, Algorithm, aggregate, run_episode, run_montecarlo

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
VIOLATION_SLACK = 0.02

log = logging.getLogger("safelearn")


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("safelearn.data").iterdir() if p.name.endswith(".json"))


def resolve_config(name: str) -> str:
    """Return the text of a config given a path or the name of a bundled config."""
    path = Path(name)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    bundled = resources.files("safelearn.data") / f"{name}.json"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    raise ConfigError(f"config {name!r} is neither a file nor one of {bundled_configs()}")


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _scenario(args):
    doc, scenario = load_scenario(resolve_config(args.config))
    algorithm = Algorithm.parse(args.algorithm or doc.algorithm)
    seed = doc.seed if args.seed is None else args.seed
    return doc, scenario, algorithm, seed


def cmd_simulate(args) -> int:
    doc, scenario, algorithm, seed = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logs = {"filtered" if algorithm != UNFILTERED else "unfiltered": run_episode(scenario, algorithm, 0, seed)}
    if args.compare and algorithm != UNFILTERED:
        logs["unfiltered"] = run_episode(scenario, UNFILTERED, 0, seed)
    for name, tr in logs.items():
        fname = "trajectory.csv" if name == next(iter(logs)) else f"trajectory_{name}.csv"
        artifacts.write_trajectory_csv(out / fname, tr)
    summary = {
        "schema_version": artifacts.SUMMARY_SCHEMA_VERSION,
        "command": "simulate",
        "config": doc.model_dump(mode="json"),
        "seed": seed,
        "algorithm": algorithm.label,
        "runs": {name: tr.summary() for name, tr in logs.items()},
    }
    artifacts.validate_summary(artifacts.jsonable(summary))
    artifacts.write_json(out / "summary.json", summary)
    (out / "trajectory.svg").write_text(artifacts.trajectory_svg(scenario, logs), encoding="utf-8")
    for name, tr in logs.items():
        s = tr.summary()
        print(f"{name}: steps={s['steps']} reached_goal={s['reached_goal']} "
              f"min_clearance={s['min_clearance']:.3f} penetration_steps={s['penetration_steps']}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    doc, scenario, algorithm, seed = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = {algorithm.label: run_montecarlo(scenario, algorithm, args.episodes, seed, args.workers)}
    if args.compare and algorithm != UNFILTERED:
        runs[UNFILTERED.label] = run_montecarlo(scenario, UNFILTERED, args.episodes, seed, args.workers)
    agg = {name: aggregate(s) for name, s in runs.items()}
    limit = scenario.delta + VIOLATION_SLACK
    main = agg[algorithm.label]
    ok = algorithm == UNFILTERED or main["violation_rate"] <= limit
    report = {
        "schema_version": artifacts.SUMMARY_SCHEMA_VERSION,
        "command": "montecarlo",
        "config": doc.model_dump(mode="json"),
        "seed": seed,
        "episodes": args.episodes,
        "algorithm": algorithm.label,
        "violation_limit": limit,
        "pass": ok,
        "aggregate": agg,
        "per_episode": runs,
    }
    # Single writer after the reduction above.
    artifacts.write_json(out / "montecarlo.json", report)
    for name, a in agg.items():
        print(f"{name}: violation_rate={a['violation_rate']:.5f} goal_reach_rate={a['goal_reach_rate']:.3f} "
              f"infeasibility_rate={a['infeasibility_rate']:.5f} penetration_steps={a['penetration_steps']}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_verify(args) -> int:
    if args.suite not in (*SUITES, "all"):
        print(f"error: unknown suite {args.suite!r}; choose from {', '.join((*SUITES, 'all'))}", file=sys.stderr)
        return EXIT_USAGE
    results = run_suite(args.suite)
    text = json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.check}: estimate {r.estimate:.6g} vs target {r.target:.6g} (tolerance {r.tolerance})",
              file=sys.stderr)
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def cmd_field_demo(args) -> int:
    doc = load_field(resolve_config(args.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_field_demo(doc, args.seed)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    artifacts.write_json(out / "regions_before.json", res.before)
    artifacts.write_json(out / "regions_after.json", res.after)
    artifacts.write_json(out / "coverage.json", {**res.coverage, "merge_events": res.merges, "warnings": res.warnings})
    (out / "region_count.csv").write_bytes(artifacts.region_count_csv(res.region_counts).encode("utf-8"))
    print(f"regions: {res.region_counts[0][1]} -> {res.region_counts[-1][1]} after {len(res.merges)} merges")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safelearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-step warnings")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("config", help=f"scenario JSON path or bundled name ({', '.join(bundled_configs())})")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=_seed, help="override the config seed")
        sp.add_argument("--algorithm", help="algorithm1, algorithm2, unfiltered or fixed:<BoundKind>")
        sp.add_argument("--compare", action="store_true", help="also run the unfiltered baseline")

    sp = sub.add_parser("simulate", help="run one episode and write CSV, JSON and SVG")
    scenario_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("montecarlo", help="run many episodes and write an aggregate report")
    scenario_args(sp)
    sp.add_argument("--episodes", type=_positive, default=100)
    sp.add_argument("--workers", type=_positive, default=max(1, min(os.cpu_count() or 1, 8)))
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("verify", help="run statistical oracle checks")
    sp.add_argument("suite", help=f"one of {', '.join((*SUITES, 'all'))}")
    sp.add_argument("--out", help="also write the JSON report to this file")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("field-demo", help="observe/merge loop on a synthetic spatial field")
    sp.add_argument("config", help="field JSON path or bundled name")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=_seed)
    sp.set_defaults(func=cmd_field_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
