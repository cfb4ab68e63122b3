"""Observability checks, estimator dispatch and the Monte Carlo MSE harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import weave

from binsense.config import ScenarioConfig
from binsense.errors import BinsenseError, EstimationError
from binsense.geometry import (
    GaussianRandomWalk,
    SeedStreams,
    SensorField,
    TargetState,
    TrajectoryModel,
    Vec2,
    sample_field,
    sample_times,
    simulate_truth,
    trajectory_state,
)
from binsense.observe import CounterField, Snapshot, observe_run, snapshot
from binsense.ppr import estimate_velocity_ppr
from binsense.svm import (
    LabeledPoints,
    VelocityEstimate,
    multi_period_velocity,
    stairwise_plane_svm,
    two_period_velocity,
)
from binsense.track import TrackResult, run_tracker

INDISTINGUISHABLE_TOL = 1e-6


@dataclass(frozen=True)
class IndistinguishabilityReport:
    indistinguishable: bool
    max_violation: float
    # Worst violation of each condition over the time grid
    conditions: dict[str, float] = field(default_factory=dict)


def _deterministic(model: TrajectoryModel) -> None:
    if isinstance(model, GaussianRandomWalk):
        raise BinsenseError("indistinguishability is defined for deterministic trajectories only")


@weave.op()
def indistinguishable(
    traj_a: TrajectoryModel,
    traj_b: TrajectoryModel,
    times: Sequence[float],
    tol: float = INDISTINGUISHABLE_TOL,
) -> IndistinguishabilityReport:
    """Check velocity collinearity with a positive factor and offset orthogonality at every time."""
    _deterministic(traj_a)
    _deterministic(traj_b)
    times = list(times)
    if not times:
        raise BinsenseError("indistinguishability check needs at least one time")

    collinear = positive = orthogonal = 0.0
    for t in times:
        a, b = trajectory_state(traj_a, t), trajectory_state(traj_b, t)
        na, nb = a.velocity.norm(), b.velocity.norm()
        if na == 0.0 or nb == 0.0:
            if na != nb:
                collinear = max(collinear, 1.0)
            continue
        collinear = max(collinear, abs(a.velocity.cross(b.velocity)) / (na * nb))
        cosine = a.velocity.dot(b.velocity) / (na * nb)
        if cosine <= 0:
            positive = max(positive, 1.0 - cosine)
        offset = a.position - b.position
        orthogonal = max(orthogonal, abs(offset.dot(a.velocity)) / (na * max(1.0, offset.norm())))

    conditions = {"collinear": collinear, "positive": positive, "orthogonal": orthogonal}
    worst = max(conditions.values())
    return IndistinguishabilityReport(worst <= tol, worst, conditions)


def sign_sequences(model: TrajectoryModel, field: SensorField, times: Sequence[float]) -> np.ndarray:
    """(len(times), N) matrix of sensor signs along a deterministic trajectory."""
    _deterministic(model)
    return np.stack([snapshot(field, state).signs for state in simulate_truth(model, times)])


def sign_sequence_oracle(
    traj_a: TrajectoryModel,
    traj_b: TrajectoryModel,
    field: SensorField,
    times: Sequence[float],
) -> bool:
    """True iff every sensor reports the same sign sequence for both trajectories."""
    return bool(np.array_equal(sign_sequences(traj_a, field, times), sign_sequences(traj_b, field, times)))


# -- estimation --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Run:
    """One simulated scenario run."""

    field: SensorField
    truth: list[TargetState]
    snapshots: list[Snapshot]
    counters: CounterField
    period: float


def simulate_run(config: ScenarioConfig, streams: SeedStreams, n: int | None = None) -> Run:
    spec = config.field
    n = n or spec.n
    field_rng = streams.generator("field") if spec.seed is None else np.random.default_rng(spec.seed)
    sensors = sample_field(n, spec.region(), field_rng)
    period = config.observation.period
    times = sample_times(config.observation.n_samples, period)
    truth = simulate_truth(config.trajectory(), times, streams.generator("walk"))
    snapshots, counters = observe_run(sensors, truth, config.observation.p, streams.generator("flip"))
    return Run(sensors, truth, snapshots, counters, period)


def _both_signs(snapshots: Sequence[Snapshot]) -> list[Snapshot]:
    return [snap for snap in snapshots if snap.has_both_signs]


def estimate_velocity(method: str, run: Run, config: ScenarioConfig) -> VelocityEstimate:
    """Dispatch one of the estimator tags svm2d, svm3d, svm2p, ppr on a simulated run."""
    spec = config.estimator
    if method == "ppr":
        return estimate_velocity_ppr(run.field, run.counters, spec.kernel_config(run.field), spec.grid, run.period)
    if method == "svm3d":
        return stairwise_plane_svm(run.field, run.counters, run.period, spec.C)
    if method == "svm2d":
        return multi_period_velocity(run.field, run.snapshots, spec.C)
    if method == "svm2p":
        usable = _both_signs(run.snapshots)
        if len(usable) < 2:
            raise EstimationError("fewer than two snapshots with both signs present")
        first, last = usable[0], usable[-1]
        _, estimate = two_period_velocity(
            LabeledPoints.from_snapshot(run.field, first),
            LabeledPoints.from_snapshot(run.field, last),
            last.time - first.time,
            fallback_C=spec.C,
        )
        return estimate
    raise BinsenseError(f"unknown estimator {method!r}")


def true_velocity(truth: Sequence[TargetState]) -> Vec2:
    """Average velocity of a run: net displacement over elapsed time."""
    elapsed = truth[-1].time - truth[0].time
    if elapsed <= 0:
        return truth[0].velocity
    return (1.0 / elapsed) * (truth[-1].position - truth[0].position)


def angle_between(a: Vec2, b: Vec2) -> float:
    """Unsigned angle in [0, pi] between two nonzero vectors."""
    cosine = a.dot(b) / (a.norm() * b.norm())
    return float(math.acos(min(1.0, max(-1.0, cosine))))


# -- Monte Carlo -----------------------------------------------------------------------------


@dataclass(frozen=True)
class MseCurve:
    """Mean squared errors per sweep value (sensor count, or time step when tracking)."""

    kind: str
    sweep_values: list[float]
    mse_position: list[float]
    mse_velocity: list[float]
    mse_direction: list[float]
    sd_position: list[float]
    sd_velocity: list[float]
    sd_direction: list[float]
    reps_ok: list[int]
    reps_failed: list[int]
    seed: int

    def __post_init__(self) -> None:
        if not self.reps_ok or max(ok + bad for ok, bad in zip(self.reps_ok, self.reps_failed)) <= 0:
            raise BinsenseError("an MSE curve needs at least one replication")
        for name in ("mse_position", "mse_velocity", "mse_direction"):
            values = np.asarray(getattr(self, name), dtype=float)
            if np.any(values[~np.isnan(values)] < 0):
                raise BinsenseError(f"{name} must be non-negative")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "sweep_value": self.sweep_values,
                "mse_position": self.mse_position,
                "mse_velocity": self.mse_velocity,
                "mse_direction": self.mse_direction,
                "reps_ok": self.reps_ok,
                "reps_failed": self.reps_failed,
                "sd_position": self.sd_position,
                "sd_velocity": self.sd_velocity,
                "sd_direction": self.sd_direction,
            }
        )


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


@dataclass
class SweepErrors:
    """Squared errors of one sweep value, in replication order."""

    direction: list[float] = field(default_factory=list)
    speed: list[float] = field(default_factory=list)
    failed: int = 0


def estimator_errors(
    config: ScenarioConfig,
    method: str,
    reps: int,
    seed: int,
    n: int | None = None,
) -> SweepErrors:
    """Run reps seeded replications of one estimator; failures are counted, not imputed."""
    errors = SweepErrors()
    streams = SeedStreams(seed)
    for r in range(reps):
        run = simulate_run(config, streams.for_replication(r), n)
        truth = true_velocity(run.truth)
        try:
            estimate = estimate_velocity(method, run, config)
        except BinsenseError:
            errors.failed += 1
            continue
        errors.direction.append(angle_between(estimate.direction, truth) ** 2)
        errors.speed.append((estimate.speed - truth.norm()) ** 2)
    return errors


def tracking_runs(config: ScenarioConfig, reps: int, seed: int) -> list[TrackResult | None]:
    """Tracker output of each replication, None where the tracker raised."""
    streams = SeedStreams(seed)
    tracker = config.estimator.tracker_config(config.observation.period)
    results: list[TrackResult | None] = []
    for r in range(reps):
        rep = streams.for_replication(r)
        run = simulate_run(config, rep)
        try:
            results.append(run_tracker(run.field, run.truth, run.snapshots, rep.generator("init"), tracker))
        except BinsenseError:
            results.append(None)
    return results


@weave.op()
def run_monte_carlo(
    config: ScenarioConfig,
    estimator: str | None = None,
    reps: int | None = None,
    seed: int | None = None,
) -> MseCurve:
    """Seeded Monte Carlo MSE: a sensor-count sweep, or per-step tracking errors."""
    reps = config.bench.reps if reps is None else reps
    seed = config.seed if seed is None else seed
    if reps < 1:
        raise BinsenseError(f"reps must be >= 1, got {reps}")
    if config.bench.mode == "track":
        return _tracking_curve(config, reps, seed)

    method = estimator or config.estimator.method
    sweep = config.bench.sweep or [config.field.n]
    rows = []
    for n in sweep:
        errors = estimator_errors(config, method, reps, seed, n)
        rows.append((n, _mean_sd(errors.direction), _mean_sd(errors.speed), len(errors.speed), errors.failed))
    return MseCurve(
        kind="sweep",
        sweep_values=[float(n) for n, *_ in rows],
        mse_position=[math.nan] * len(rows),
        mse_velocity=[row[2][0] for row in rows],
        mse_direction=[row[1][0] for row in rows],
        sd_position=[math.nan] * len(rows),
        sd_velocity=[row[2][1] for row in rows],
        sd_direction=[row[1][1] for row in rows],
        reps_ok=[row[3] for row in rows],
        reps_failed=[row[4] for row in rows],
        seed=seed,
    )


def _tracking_curve(config: ScenarioConfig, reps: int, seed: int) -> MseCurve:
    results = tracking_runs(config, reps, seed)
    ok = [res for res in results if res is not None]
    failed = len(results) - len(ok)
    steps = config.observation.n_samples
    period = config.observation.period
    pos = np.array([res.position_errors() ** 2 for res in ok]).reshape(len(ok), steps)
    vel = np.array([res.velocity_errors(period) ** 2 for res in ok]).reshape(len(ok), steps)
    dirs = np.array(
        [[angle_between(r.direction, s.velocity) ** 2 for r, s in zip(res.records, res.truth)] for res in ok]
    ).reshape(len(ok), steps)

    def column(values: np.ndarray, reducer) -> list[float]:
        if len(ok) == 0:
            return [math.nan] * steps
        return [float(v) for v in reducer(values, axis=0)]

    return MseCurve(
        kind="track",
        sweep_values=[float(t) for t in sample_times(steps, period)],
        mse_position=column(pos, np.mean),
        mse_velocity=column(vel, np.mean),
        mse_direction=column(dirs, np.mean),
        sd_position=column(pos, np.std),
        sd_velocity=column(vel, np.std),
        sd_direction=column(dirs, np.std),
        reps_ok=[len(ok)] * steps,
        reps_failed=[failed] * steps,
        seed=seed,
    )
