"""Command-line runner: simulate, estimate-cv, track and bench subcommands.

Exit status 0 on success, 2 for an invalid scenario, 3 when an estimator fails.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from binsense.analysis import estimate_velocity, run_monte_carlo, simulate_run, true_velocity
from binsense.config import ESTIMATORS, ConfigError, ScenarioConfig, config_hash, load_scenario, with_overrides
from binsense.errors import BinsenseError
from binsense.geometry import SeedStreams
from binsense.outputs import (
    counters_frame,
    error_record,
    snapshots_frame,
    track_frame,
    write_csv,
    write_json,
)
from binsense.track import run_tracker
from binsense.weave_init import ensure_weave_init, status

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_ESTIMATION_FAILED = 3


def cmd_simulate(config: ScenarioConfig, digest: str, out: Path) -> list[Path]:
    run = simulate_run(config, SeedStreams(config.seed))
    return [
        write_csv(out / "signs.csv", snapshots_frame(run.field, run.snapshots), digest, config.seed),
        write_csv(out / "counters.csv", counters_frame(run.field, run.counters), digest, config.seed),
    ]


def cmd_estimate_cv(config: ScenarioConfig, digest: str, out: Path) -> list[Path]:
    run = simulate_run(config, SeedStreams(config.seed))
    estimate = estimate_velocity(config.estimator.method, run, config)
    truth = true_velocity(run.truth)
    payload = {
        "config_sha256": digest,
        "seed": config.seed,
        "scenario": config.name,
        "estimator": config.estimator.method,
        "method": estimate.method,
        "direction": [estimate.direction.x, estimate.direction.y],
        "speed": estimate.speed,
        "velocity": [estimate.velocity.x, estimate.velocity.y],
        "flags": list(estimate.flags),
        "truth": {"velocity": [truth.x, truth.y], "speed": truth.norm()},
    }
    path = write_json(out / "estimate.json", payload)
    print(path.read_text(encoding="utf-8"), end="")
    return [path]


def cmd_track(config: ScenarioConfig, digest: str, out: Path) -> list[Path]:
    streams = SeedStreams(config.seed)
    run = simulate_run(config, streams)
    tracker = config.estimator.tracker_config(config.observation.period)
    result = run_tracker(run.field, run.truth, run.snapshots, streams.generator("init"), tracker)
    return [write_csv(out / "track.csv", track_frame(result), digest, config.seed)]


def cmd_bench(config: ScenarioConfig, digest: str, out: Path) -> list[Path]:
    curve = run_monte_carlo(config)
    failed = sum(curve.reps_failed) if curve.kind == "sweep" else curve.reps_failed[0]
    if failed:
        status("WARN", f"{failed} replication(s) failed and were excluded")
    return [write_csv(out / "mse.csv", curve.to_frame(), digest, config.seed)]


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-cv": cmd_estimate_cv,
    "track": cmd_track,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Scenario YAML file")
    common.add_argument("--seed", type=int, default=None, help="Seed (overrides BT_SEED and the scenario)")
    common.add_argument("--out", default=None, help="Output directory (overrides output.dir)")
    common.add_argument("--quiet", action="store_true", help="No status lines on stderr")

    parser = argparse.ArgumentParser(
        prog="binsense",
        description="Velocity estimation and tracking with binary derivative sensor networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Emit sign and counter CSVs")
    estimate = sub.add_parser("estimate-cv", parents=[common], help="Batch velocity estimate, JSON result")
    estimate.add_argument("--estimator", choices=ESTIMATORS, default=None)
    sub.add_parser("track", parents=[common], help="Online tracker, track log CSV")
    bench = sub.add_parser("bench", parents=[common], help="Monte Carlo MSE sweep")
    bench.add_argument("--reps", type=int, default=None, help="Replications per sweep value")
    bench.add_argument("--estimator", choices=ESTIMATORS, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.quiet:
        os.environ["BINSENSE_QUIET"] = "1"

    try:
        config = with_overrides(
            load_scenario(args.config),
            seed=args.seed,
            reps=getattr(args, "reps", None),
            estimator=getattr(args, "estimator", None),
            out=args.out,
        )
    except ConfigError as exc:
        error_record("invalid_config", str(exc), exc.details)
        return EXIT_INVALID_CONFIG

    ensure_weave_init()
    digest = config_hash(config)
    status("INFO", f"{args.command} {config.name} seed={config.seed} sha256={digest[:12]}")
    try:
        written = COMMANDS[args.command](config, digest, Path(config.output.dir))
    except BinsenseError as exc:
        error_record("estimation_failed", str(exc), [{"type": type(exc).__name__}])
        return EXIT_ESTIMATION_FAILED

    for path in written:
        status("OK", f"Wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
