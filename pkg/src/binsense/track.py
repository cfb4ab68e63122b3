"""Online tracker for a random-walk target.

Each step takes one snapshot and runs, in order:

1. direction: soft-margin separator of the snapshot (previous one kept if the
   snapshot has a single sign);
2. lambda: move along the previous direction until the estimate projects onto
   the middle of the feasible slab;
3. window check: compare lambda with the mean and spread of the last k values;
4. theta: perpendicular correction when lambda left the window interval;
5. retrodiction: feed theta back to every earlier position.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import weave

from binsense.errors import BinsenseError
from binsense.geometry import Bounds, SensorField, TargetState, Vec2, unit
from binsense.observe import Snapshot, feasible_slab
from binsense.svm import DEFAULT_C, LabeledPoints, fit_separator, orient

EPS_PARALLEL = 1e-3
SIGMA_MIN = 0.1
INIT_MAX_DRAWS = 100_000

SlabMode = Literal["midpoint", "lower", "upper"]


@dataclass(frozen=True)
class TrackerConfig:
    k: int = 5
    vs_moy: SlabMode = "midpoint"
    eps_parallel: float = EPS_PARALLEL
    # Minimum |<v_t^perp, v_{t-1}>| for a theta correction
    theta_eps: float = EPS_PARALLEL
    sigma_min: float = SIGMA_MIN
    C: float = DEFAULT_C
    period: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 2:
            raise BinsenseError(f"velocity window needs k >= 2, got {self.k}")
        if self.vs_moy not in ("midpoint", "lower", "upper"):
            raise BinsenseError(f"unknown vs_moy mode {self.vs_moy!r}")
        if not (self.eps_parallel >= 0 and self.theta_eps >= 0 and self.sigma_min >= 0):
            raise BinsenseError("tracker tolerances must be non-negative")
        if not self.period > 0:
            raise BinsenseError(f"period must be positive, got {self.period}")


class VelocityWindow:
    """The last k lambda values, with their mean and standard deviation."""

    def __init__(self, k: int = 5, sigma_min: float = SIGMA_MIN):
        if k < 2:
            raise BinsenseError(f"velocity window needs k >= 2, got {k}")
        self.k = k
        self.sigma_min = sigma_min
        self._values: deque[float] = deque(maxlen=k)

    def push(self, value: float) -> None:
        self._values.append(float(value))

    def __len__(self) -> int:
        return len(self._values)

    @property
    def full(self) -> bool:
        return len(self._values) == self.k

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(self._values)

    @property
    def m(self) -> float:
        if not self._values:
            raise BinsenseError("empty velocity window")
        return float(np.mean(self._values))

    @property
    def sigma(self) -> float:
        if not self._values:
            raise BinsenseError("empty velocity window")
        return float(np.std(self._values))

    def interval(self) -> tuple[float, float]:
        sigma = self.sigma
        half = self.sigma_min if sigma == 0.0 else sigma
        return self.m - half, self.m + half


@dataclass(frozen=True)
class StepRecord:
    time: float
    position: Vec2
    corrected: Vec2
    direction: Vec2
    lam: float
    theta: float
    flags: tuple[str, ...] = ()

    @property
    def speed(self) -> float:
        return self.lam


@dataclass
class TrackState:
    """Current estimate plus the append-only step history of one run."""

    position: Vec2
    direction: Vec2
    time: float = 0.0
    speed_history: list[float] = field(default_factory=list)
    position_history: list[StepRecord] = field(default_factory=list)
    retrodicted: list[Vec2] = field(default_factory=list)
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if abs(self.direction.norm() - 1.0) > 1e-9:
            self.direction = self.direction.normalized()

    def append(self, record: StepRecord) -> None:
        if self.position_history and record.time < self.position_history[-1].time:
            raise BinsenseError("track records must be appended in time order")
        if record.theta != 0.0:
            shift = record.theta * record.direction.perp()
            self.retrodicted = [z + shift for z in self.retrodicted]
        self.position_history.append(record)
        self.retrodicted.append(record.position)
        self.position = record.position
        self.direction = record.direction
        self.time = record.time


def estimate_direction_step(
    field: SensorField,
    reports: Snapshot,
    previous: Vec2 | None = None,
    C: float = DEFAULT_C,
) -> tuple[Vec2, tuple[str, ...]]:
    """Unit normal of the soft-margin separator, '+' side ahead."""
    if not reports.has_both_signs:
        if previous is None:
            raise BinsenseError("single-sign snapshot and no previous direction")
        return previous, ("direction_retained",)
    points = LabeledPoints.from_snapshot(field, reports)
    separator, dual = fit_separator(points, C)
    w = separator.w / np.linalg.norm(separator.w)
    direction = Vec2.of(orient(w, points.points, points.labels))
    return direction, () if dual.converged else ("unconverged",)


def _uniform_in_slab(
    bounds: Bounds,
    direction: Vec2,
    lower: float,
    upper: float,
    rng: np.random.Generator,
    max_draws: int = INIT_MAX_DRAWS,
    batch: int = 1_000,
) -> Vec2 | None:
    d = direction.as_array()
    drawn = 0
    while drawn < max_draws:
        size = min(batch, max_draws - drawn)
        pts = rng.uniform([bounds.xmin, bounds.ymin], [bounds.xmax, bounds.ymax], size=(size, 2))
        proj = pts @ d
        hit = np.flatnonzero((proj > lower) & (proj < upper))
        if len(hit):
            return Vec2.of(pts[hit[0]])
        drawn += size
    return None


@weave.op()
def init_track(
    field: SensorField,
    reports: Snapshot,
    rng: np.random.Generator,
    cfg: TrackerConfig | None = None,
) -> TrackState:
    """Initial direction from the first snapshot, position uniform over its feasible slab."""
    cfg = cfg or TrackerConfig()
    bounds = field.bounds

    def uniform() -> Vec2:
        return Vec2.of(rng.uniform([bounds.xmin, bounds.ymin], [bounds.xmax, bounds.ymax]))

    if not reports.has_both_signs:
        direction = unit(rng.uniform(0.0, 2 * math.pi))
        state = TrackState(uniform(), direction, reports.time, flags=("single_sign", "full_bounds_init"))
    else:
        direction, flags = estimate_direction_step(field, reports, C=cfg.C)
        slab = feasible_slab(field, reports, direction)
        position = _uniform_in_slab(bounds, direction, slab.lower, slab.upper, rng)
        if position is None:
            position, flags = uniform(), flags + ("full_bounds_init",)
        state = TrackState(position, direction, reports.time, flags=flags)

    state.append(StepRecord(reports.time, state.position, state.position, state.direction, 0.0, 0.0, state.flags))
    return state


def slab_target(lower: float, upper: float, mode: SlabMode = "midpoint") -> float:
    if mode == "lower":
        return lower
    if mode == "upper":
        return upper
    return (lower + upper) / 2


def lambda_correct(
    state: TrackState,
    field: SensorField,
    reports: Snapshot,
    direction: Vec2,
    mode: SlabMode = "midpoint",
    eps_parallel: float = EPS_PARALLEL,
) -> tuple[float, Vec2, tuple[str, ...]]:
    """Step along the previous direction so the estimate projects onto the slab target.

    Returns (lambda, corrected position, flags); lambda is skipped (0, position
    unchanged) when the slab is unbounded or the two directions are near orthogonal.
    """
    slab = feasible_slab(field, reports, direction)
    if not slab.bounded:
        return 0.0, state.position, ("lambda_skipped",) + slab.flags
    c = direction.dot(state.direction)
    if abs(c) <= eps_parallel:
        return 0.0, state.position, ("lambda_skipped",)
    target = slab_target(slab.lower, slab.upper, mode)
    lam = (target - direction.dot(state.position)) / c
    return lam, state.position + lam * state.direction, ()


def theta_correct(
    window: VelocityWindow,
    lam: float,
    direction: Vec2,
    previous: Vec2,
    corrected: Vec2,
    theta_eps: float = EPS_PARALLEL,
    bounds: Bounds | None = None,
) -> tuple[float, Vec2, tuple[str, ...]]:
    """Perpendicular correction when lambda falls outside [m - sigma, m + sigma]."""
    if not window.full:
        return 0.0, corrected, ("warmup",)
    lo, hi = window.interval()
    if lo <= lam <= hi:
        return 0.0, corrected, ()
    perp = direction.perp()
    s = perp.dot(previous)
    if abs(s) <= theta_eps:
        # Rectilinear motion: no perpendicular information
        return 0.0, corrected, ()
    theta = (window.m - lam) / s
    final = corrected + theta * perp
    if bounds is not None and not bool(bounds.contains(final.as_array())[0]):
        return 0.0, corrected, ("theta_rejected",)
    return theta, final, ()


def retrodict(history: Sequence[StepRecord]) -> list[Vec2]:
    """z_j = x_j + sum over i > j of theta_i v_i^perp."""
    if not history:
        raise BinsenseError("retrodiction needs a non-empty history")
    out: list[Vec2] = [history[-1].position]
    feedback = Vec2(0.0, 0.0)
    for later, record in zip(reversed(history[1:]), reversed(history[:-1])):
        feedback = feedback + later.theta * later.direction.perp()
        out.append(record.position + feedback)
    out.reverse()
    return out


@weave.op()
def track_step(
    state: TrackState,
    field: SensorField,
    reports: Snapshot,
    window: VelocityWindow,
    cfg: TrackerConfig | None = None,
) -> TrackState:
    cfg = cfg or TrackerConfig()
    previous = state.direction
    direction, flags = estimate_direction_step(field, reports, previous, cfg.C)
    if not reports.has_both_signs:
        flags = flags + ("single_sign",)

    lam, corrected, lam_flags = lambda_correct(state, field, reports, direction, cfg.vs_moy, cfg.eps_parallel)
    flags += lam_flags
    if "lambda_skipped" in lam_flags:
        theta, final = 0.0, corrected
    else:
        theta, final, theta_flags = theta_correct(
            window, lam, direction, previous, corrected, cfg.theta_eps, field.bounds
        )
        flags += theta_flags
        window.push(lam)
        state.speed_history.append(lam)

    state.append(StepRecord(reports.time, final, corrected, direction, lam, theta, flags))
    return state


@dataclass(frozen=True)
class TrackResult:
    records: list[StepRecord]
    retrodicted: list[Vec2]
    truth: list[TargetState]

    def position_errors(self) -> np.ndarray:
        return np.array([(r.position - s.position).norm() for r, s in zip(self.records, self.truth)])

    def velocity_errors(self, period: float = 1.0) -> np.ndarray:
        """Error of (lambda / period) along the step direction against the true velocity."""
        return np.array(
            [((r.lam / period) * r.direction - s.velocity).norm() for r, s in zip(self.records, self.truth)]
        )


@weave.op()
def run_tracker(
    field: SensorField,
    truth: Sequence[TargetState],
    snapshots: Sequence[Snapshot],
    rng: np.random.Generator,
    cfg: TrackerConfig | None = None,
) -> TrackResult:
    """Track a whole run: init on the first snapshot, one track_step per later snapshot."""
    if not snapshots:
        raise BinsenseError("tracking needs at least one snapshot")
    if len(truth) != len(snapshots):
        raise BinsenseError(f"{len(truth)} true states for {len(snapshots)} snapshots")
    cfg = cfg or TrackerConfig()
    state = init_track(field, snapshots[0], rng, cfg)
    window = VelocityWindow(cfg.k, cfg.sigma_min)
    for reports in snapshots[1:]:
        track_step(state, field, reports, window, cfg)
    return TrackResult(list(state.position_history), list(state.retrodicted), list(truth))
