"""Binary derivative reports, counter fields, feasible slabs and hull separability."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import weave

from binsense.errors import BinsenseError
from binsense.geometry import SensorField, TargetState, Vec2

# Absolute tolerance (meters) of the orientation predicates
EPS_GEO = 1e-9


@dataclass(frozen=True)
class SignReport:
    sensor_index: int
    time: float
    sign: int

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise BinsenseError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True, eq=False)
class Snapshot(Sequence):
    """All sensor reports of one period, in field order."""

    time: float
    signs: np.ndarray

    def __post_init__(self) -> None:
        signs = np.array(self.signs, dtype=np.int8)
        if signs.ndim != 1 or not np.all(np.abs(signs) == 1):
            raise BinsenseError("snapshot signs must be a vector of +1/-1")
        signs.setflags(write=False)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def from_reports(cls, reports: Iterable[SignReport]) -> Snapshot:
        reports = sorted(reports, key=lambda r: r.sensor_index)
        if not reports:
            raise BinsenseError("a snapshot needs at least one report")
        if [r.sensor_index for r in reports] != list(range(len(reports))):
            raise BinsenseError("reports must cover sensor indices 0..n-1 exactly once")
        times = {r.time for r in reports}
        if len(times) != 1:
            raise BinsenseError(f"reports of one snapshot must share a time, got {sorted(times)}")
        return cls(times.pop(), np.array([r.sign for r in reports]))

    def __len__(self) -> int:
        return len(self.signs)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        if index < 0:
            index += len(self)
        return SignReport(index, self.time, int(self.signs[index]))

    @property
    def plus(self) -> np.ndarray:
        return self.signs > 0

    @property
    def minus(self) -> np.ndarray:
        return self.signs < 0

    @property
    def has_both_signs(self) -> bool:
        return bool(self.plus.any() and self.minus.any())


def sign_at(sensor: Vec2, target: TargetState) -> int:
    """+1 when the range to the target is strictly decreasing, else -1."""
    if target.velocity.norm() == 0.0:
        raise BinsenseError("sign undefined for a target with zero velocity")
    return 1 if (target.position - sensor).dot(target.velocity) < 0 else -1


@weave.op()
def snapshot(field: SensorField, target: TargetState) -> Snapshot:
    if target.velocity.norm() == 0.0:
        raise BinsenseError("sign undefined for a target with zero velocity")
    inner = (target.position.as_array() - field.positions) @ target.velocity.as_array()
    return Snapshot(target.time, np.where(inner < 0, 1, -1))


def apply_flip_noise(reports: Snapshot, p: float, rng: np.random.Generator) -> Snapshot:
    """Keep each sign with probability p, flip it otherwise."""
    if not (0.0 < p <= 1.0):
        raise BinsenseError(f"flip probability p must lie in (0, 1], got {p}")
    keep = rng.random(len(reports)) < p
    return Snapshot(reports.time, np.where(keep, reports.signs, -reports.signs))


@dataclass(frozen=True, eq=False)
class CounterField:
    """Per-sensor count of '+' periods: samples of the stairwise functional."""

    counts: np.ndarray
    periods_elapsed: int = 0

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise BinsenseError("counts must be a vector")
        if self.periods_elapsed < 0 or np.any(counts < 0) or np.any(counts > self.periods_elapsed):
            raise BinsenseError("counts must lie in [0, periods_elapsed]")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, n: int) -> CounterField:
        return cls(np.zeros(n, dtype=np.int64), 0)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.counts == self.counts[0]))


def update_counters(counters: CounterField, reports: Snapshot) -> CounterField:
    if len(reports) != len(counters):
        raise BinsenseError(f"{len(reports)} reports for {len(counters)} counters")
    return CounterField(counters.counts + reports.plus, counters.periods_elapsed + 1)


def observe_run(
    field: SensorField,
    states: Sequence[TargetState],
    p: float = 1.0,
    rng: np.random.Generator | None = None,
) -> tuple[list[Snapshot], CounterField]:
    """Snapshots of every state (flip noise applied when p < 1) and the final counters."""
    counters = CounterField.empty(len(field))
    snapshots: list[Snapshot] = []
    for state in states:
        snap = snapshot(field, state)
        if p < 1.0:
            if rng is None:
                raise BinsenseError("flip noise needs a generator")
            snap = apply_flip_noise(snap, p, rng)
        snapshots.append(snap)
        counters = update_counters(counters, snap)
    return snapshots, counters


@dataclass(frozen=True)
class FeasibleSlab:
    """Strip {p : lower < <p, direction> < upper} between the '-' and '+' sensors."""

    direction: Vec2
    lower: float
    upper: float

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    @property
    def flags(self) -> tuple[str, ...]:
        return () if self.bounded else ("slab_unbounded",)

    @property
    def midpoint(self) -> float:
        return (self.lower + self.upper) / 2

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower < value < self.upper


def feasible_slab(field: SensorField, reports: Snapshot, direction: Vec2) -> FeasibleSlab:
    if len(reports) != len(field):
        raise BinsenseError(f"{len(reports)} reports for {len(field)} sensors")
    direction = direction.normalized()
    proj = field.project(direction)
    lower = float(proj[reports.minus].max()) if reports.minus.any() else -math.inf
    upper = float(proj[reports.plus].min()) if reports.plus.any() else math.inf
    return FeasibleSlab(direction, lower, upper)


# -- convex hulls ---------------------------------------------------------------------


def _side(a, b, c) -> float:
    """Signed distance of c from the line through a and b (positive on the left)."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    length = math.hypot(dx, dy)
    cross = dx * (c[1] - a[1]) - dy * (c[0] - a[0])
    if length == 0.0:
        return math.hypot(c[0] - a[0], c[1] - a[1])
    return cross / length


def convex_hull(points: np.ndarray) -> list[tuple[float, float]]:
    """Counter-clockwise hull vertices by Andrew's monotone chain.

    Collinear points are dropped; one or two distinct points come back as a
    point or a segment.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return pts

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _side(lower[-2], lower[-1], p) <= EPS_GEO:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _side(upper[-2], upper[-1], p) <= EPS_GEO:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        # All points within tolerance of one line: keep the extreme pair
        return [pts[0], pts[-1]]
    return hull


def _on_segment(p, a, b) -> bool:
    if abs(_side(a, b, p)) > EPS_GEO:
        return False
    return (
        min(a[0], b[0]) - EPS_GEO <= p[0] <= max(a[0], b[0]) + EPS_GEO
        and min(a[1], b[1]) - EPS_GEO <= p[1] <= max(a[1], b[1]) + EPS_GEO
    )


def segments_intersect(a, b, c, d) -> bool:
    """Closed segments ab and cd share a point (within EPS_GEO)."""
    d1, d2 = _side(c, d, a), _side(c, d, b)
    d3, d4 = _side(a, b, c), _side(a, b, d)
    if ((d1 > EPS_GEO and d2 < -EPS_GEO) or (d1 < -EPS_GEO and d2 > EPS_GEO)) and (
        (d3 > EPS_GEO and d4 < -EPS_GEO) or (d3 < -EPS_GEO and d4 > EPS_GEO)
    ):
        return True
    return _on_segment(a, c, d) or _on_segment(b, c, d) or _on_segment(c, a, b) or _on_segment(d, a, b)


def point_in_hull(p, hull: Sequence[tuple[float, float]]) -> bool:
    """Closed membership of p in a hull from convex_hull (point, segment or polygon)."""
    if not hull:
        return False
    if len(hull) == 1:
        return math.hypot(p[0] - hull[0][0], p[1] - hull[0][1]) <= EPS_GEO
    if len(hull) == 2:
        return _on_segment(p, hull[0], hull[1])
    n = len(hull)
    return all(_side(hull[i], hull[(i + 1) % n], p) >= -EPS_GEO for i in range(n))


def _edges(hull: Sequence[tuple[float, float]]):
    if len(hull) == 2:
        return [(hull[0], hull[1])]
    if len(hull) > 2:
        return [(hull[i], hull[(i + 1) % len(hull)]) for i in range(len(hull))]
    return []


def hulls_intersect(hull_a: Sequence[tuple[float, float]], hull_b: Sequence[tuple[float, float]]) -> bool:
    if not hull_a or not hull_b:
        return False
    if any(point_in_hull(p, hull_b) for p in hull_a) or any(point_in_hull(p, hull_a) for p in hull_b):
        return True
    return any(segments_intersect(a, b, c, d) for a, b in _edges(hull_a) for c, d in _edges(hull_b))


@dataclass(frozen=True)
class SeparabilityReport:
    hulls_disjoint: bool
    target_excluded: bool | None
    hull_plus: list[tuple[float, float]] = field(default_factory=list, repr=False)
    hull_minus: list[tuple[float, float]] = field(default_factory=list, repr=False)


@weave.op()
def separability_check(
    field: SensorField,
    reports: Snapshot,
    target: TargetState | None = None,
) -> SeparabilityReport:
    """Whether C(+) and C(-) are disjoint and, given a target, whether it lies outside both."""
    if len(reports) != len(field):
        raise BinsenseError(f"{len(reports)} reports for {len(field)} sensors")
    hull_plus = convex_hull(field.positions[reports.plus])
    hull_minus = convex_hull(field.positions[reports.minus])
    disjoint = not hulls_intersect(hull_plus, hull_minus)
    excluded = None
    if target is not None:
        p = (target.position.x, target.position.y)
        excluded = not (point_in_hull(p, hull_plus) or point_in_hull(p, hull_minus))
    return SeparabilityReport(disjoint, excluded, hull_plus, hull_minus)
