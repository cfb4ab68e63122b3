"""Linear SVM in dual form, and the velocity estimators built on it.

The dual  max W(L) = -1/2 L'DL + L'1,  0 <= L <= C,  L'y = 0  is solved by
pairwise coordinate ascent: each step moves the maximal violating pair along
the direction that keeps the equality constraint, with an exact clipped line
search. Passing ``groups`` adds one equality constraint per group, which is
how a shared normal with one offset per snapshot is fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import weave

from binsense.errors import BinsenseError, EstimationError
from binsense.geometry import SensorField, Vec2
from binsense.observe import CounterField, Snapshot

EPS_KKT = 1e-6
EPS_SV = 1e-8
EPS_EQ = 1e-8
DEFAULT_C = 10.0
MAX_ITERATIONS = 100_000
# Box used for hard margin; a multiplier reaching it means the data are not separable
HARD_MARGIN_CAP = 1e8
_TAU = 1e-12

SVM_2D = "SVM-2D"
SVM_3D = "SVM-3D"
SVM_2PERIOD = "SVM-2period"
PPR = "PPR"


@dataclass(frozen=True, eq=False)
class LabeledPoints:
    """Labeled patterns (position, +1/-1); positions are 2D or 3D."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.array(self.points, dtype=float))
        labels = np.array(self.labels, dtype=float).reshape(-1)
        if len(points) != len(labels):
            raise BinsenseError(f"{len(points)} points but {len(labels)} labels")
        if not np.all(np.abs(labels) == 1):
            raise BinsenseError("labels must be +1 or -1")
        if not np.all(np.isfinite(points)):
            raise BinsenseError("points must be finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_snapshot(cls, field: SensorField, reports: Snapshot) -> LabeledPoints:
        if len(reports) != len(field):
            raise BinsenseError(f"{len(reports)} reports for {len(field)} sensors")
        return cls(field.positions, reports.signs)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def has_both_classes(self) -> bool:
        return bool((self.labels > 0).any() and (self.labels < 0).any())


@dataclass(frozen=True, eq=False)
class DualSolution:
    multipliers: np.ndarray
    support_indices: np.ndarray
    C: float
    groups: np.ndarray
    converged: bool
    iterations: int
    objective: float
    kkt_violation: float
    objective_trace: tuple[float, ...] = ()
    flags: tuple[str, ...] = ()

    @property
    def separable(self) -> bool:
        return "hard_margin_infeasible" not in self.flags


@dataclass(frozen=True, eq=False)
class LinearSeparator:
    w: np.ndarray
    b: float

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float)
        if not np.linalg.norm(w) > 0:
            raise BinsenseError("separator normal must be nonzero")
        object.__setattr__(self, "w", w)

    @property
    def margin(self) -> float:
        return 1.0 / float(np.linalg.norm(self.w))

    def decision(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.w + self.b


@dataclass(frozen=True, eq=False)
class TwoPeriodSeparator:
    w: np.ndarray
    b1: float
    b2: float

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float)
        if not np.linalg.norm(w) > 0:
            raise BinsenseError("separator normal must be nonzero")
        object.__setattr__(self, "w", w)

    @property
    def distance(self) -> float:
        """Distance between the two parallel separating lines."""
        return abs(self.b1 - self.b2) / float(np.linalg.norm(self.w))

    def speed(self, dt: float) -> float:
        if not dt > 0:
            raise BinsenseError(f"period gap must be positive, got {dt}")
        return self.distance / dt


@dataclass(frozen=True)
class VelocityEstimate:
    direction: Vec2
    speed: float
    method: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (self.speed >= 0 and math.isfinite(self.speed)):
            raise BinsenseError(f"speed must be finite and >= 0, got {self.speed}")
        if abs(self.direction.norm() - 1.0) > 1e-9:
            object.__setattr__(self, "direction", self.direction.normalized())

    @property
    def velocity(self) -> Vec2:
        return self.speed * self.direction


def _working_pair(score, up, low, groups, group_ids, K, diag):
    """Pair for the next update.

    The group with the largest first-order violation is chosen; i maximises
    the score over its up set and j maximises the second-order gain
    (s_i - s_j)^2 / a_ij over its low set. Returns (gap, i, j).
    """
    best = (0.0, -1, None)
    for k in group_ids:
        up_k = up & (groups == k)
        low_k = low & (groups == k)
        if not (up_k.any() and low_k.any()):
            continue
        i = int(np.argmax(np.where(up_k, score, -np.inf)))
        gap = float(score[i] - score[low_k].min())
        if gap > best[0]:
            best = (gap, i, low_k)
    gap, i, low_k = best
    if i < 0:
        return 0.0, -1, -1
    b = score[i] - score
    a = np.maximum(diag[i] + diag - 2.0 * K[i], _TAU)
    gain = np.where(low_k & (b > 0), b * b / a, -np.inf)
    return gap, i, int(np.argmax(gain))


@weave.op()
def solve_dual(
    points: LabeledPoints,
    C: float = math.inf,
    groups: Sequence[int] | np.ndarray | None = None,
    tol: float = EPS_KKT,
    max_iterations: int = MAX_ITERATIONS,
    record_trace: bool = False,
) -> DualSolution:
    """Maximise the SVM dual by pairwise coordinate ascent.

    ``C=inf`` is the hard margin. The returned solution carries ``unconverged``
    when the iteration cap was hit and ``hard_margin_infeasible`` when a hard
    margin multiplier ran away.
    """
    if not (C > 0):
        raise BinsenseError(f"C must be positive or inf, got {C}")
    X, y = points.points, points.labels
    l = len(y)
    g = np.zeros(l, dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
    if g.shape != (l,):
        raise BinsenseError(f"groups must have one entry per point ({l}), got shape {g.shape}")
    group_ids = np.unique(g)
    for k in group_ids:
        yk = y[g == k]
        if not ((yk > 0).any() and (yk < 0).any()):
            raise BinsenseError("each group needs at least one point of each class")

    hard = math.isinf(C)
    box = HARD_MARGIN_CAP if hard else float(C)
    # Centred Gram matrix: same optimum while sum(a_i y_i) = 0, smaller entries
    Xc = X - X.mean(axis=0)
    K = Xc @ Xc.T
    diag = np.diag(K)
    alpha = np.zeros(l)
    # Gradient of f = 1/2 a'Qa - 1'a with Q = yy' * K; W = -f
    G = -np.ones(l)
    trace: list[float] = []
    converged = False
    saturated = False
    gap = math.inf
    it = 0
    while it < max_iterations:
        score = -y * G
        up = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < box))
        gap, i, j = _working_pair(score, up, low, g, group_ids, K, diag)
        if gap <= tol:
            converged = True
            break
        curvature = max(diag[i] + diag[j] - 2.0 * K[i, j], _TAU)
        t_i = box - alpha[i] if y[i] > 0 else alpha[i]
        t_j = alpha[j] if y[j] > 0 else box - alpha[j]
        t = min((score[i] - score[j]) / curvature, t_i, t_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        G += t * y * (K[:, i] - K[:, j])
        it += 1
        if record_trace:
            trace.append(float(alpha.sum() - 0.5 * alpha @ (G + 1.0)))
        if hard and max(alpha[i], alpha[j]) >= box:
            saturated = True
            break

    if converged:
        gap = max(gap, 0.0)
    flags: list[str] = []
    if not converged:
        flags.append("unconverged")
    if saturated:
        flags.append("hard_margin_infeasible")
    objective = float(alpha.sum() - 0.5 * alpha @ (G + 1.0))
    threshold = EPS_SV * max(float(alpha.max()), np.finfo(float).tiny)
    return DualSolution(
        multipliers=alpha,
        support_indices=np.flatnonzero(alpha > threshold),
        C=C,
        groups=g,
        converged=converged,
        iterations=it,
        objective=objective,
        kkt_violation=float(gap),
        objective_trace=tuple(trace),
        flags=tuple(flags),
    )


def _offset(r: np.ndarray, y: np.ndarray, alpha: np.ndarray, box: float, sv: np.ndarray) -> float:
    """Offset b for one group, where r = y - <w, x> (b = r on the margin)."""
    free = sv & (alpha < box * (1 - 1e-9))
    if free.any():
        return float(r[free].mean())
    # No multiplier strictly inside the box: take the middle of the feasible range
    at_zero = ~sv
    at_box = sv
    geq = ((y > 0) & at_zero) | ((y < 0) & at_box)
    leq = ((y < 0) & at_zero) | ((y > 0) & at_box)
    lower = float(r[geq].max()) if geq.any() else -math.inf
    upper = float(r[leq].min()) if leq.any() else math.inf
    if math.isinf(lower) and math.isinf(upper):
        return float(r[sv].mean())
    if math.isinf(lower):
        return upper
    if math.isinf(upper):
        return lower
    return (lower + upper) / 2


def _recover(points: LabeledPoints, dual: DualSolution) -> tuple[np.ndarray, dict[int, float]]:
    if len(dual.support_indices) == 0:
        raise BinsenseError("dual solution has no support vectors")
    X, y, alpha = points.points, points.labels, dual.multipliers
    w = (alpha * y) @ X
    r = y - X @ w
    box = HARD_MARGIN_CAP if math.isinf(dual.C) else dual.C
    sv = np.zeros(len(y), dtype=bool)
    sv[dual.support_indices] = True
    offsets = {}
    for k in np.unique(dual.groups):
        in_k = dual.groups == k
        offsets[int(k)] = _offset(r[in_k], y[in_k], alpha[in_k], box, sv[in_k])
    return w, offsets


def separator_from_dual(points: LabeledPoints, dual: DualSolution) -> LinearSeparator:
    """w = sum L_i y_i x_i; b averaged over the margin support vectors."""
    w, offsets = _recover(points, dual)
    if len(offsets) != 1:
        raise BinsenseError("separator_from_dual expects a single-group solution")
    return LinearSeparator(w, next(iter(offsets.values())))


def orient(direction: np.ndarray, points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Flip direction so '+' points project further along it than '-' points."""
    proj = points @ direction
    if proj[labels > 0].mean() < proj[labels < 0].mean():
        return -direction
    return direction


def fit_separator(points: LabeledPoints, C: float = DEFAULT_C) -> tuple[LinearSeparator, DualSolution]:
    dual = solve_dual(points, C)
    return separator_from_dual(points, dual), dual


def _high_slack(points: LabeledPoints, w: np.ndarray, offsets: np.ndarray) -> bool:
    return bool(np.any(points.labels * (points.points @ w + offsets) < 0))


@weave.op()
def two_period_velocity(
    snap1: LabeledPoints,
    snap2: LabeledPoints,
    dt: float,
    C: float = math.inf,
    fallback_C: float = DEFAULT_C,
) -> tuple[TwoPeriodSeparator, VelocityEstimate]:
    """Shared-normal separators of two snapshots dt apart; speed from their distance."""
    if not dt > 0:
        raise BinsenseError(f"period gap must be positive, got {dt}")
    union = LabeledPoints(
        np.vstack([snap1.points, snap2.points]), np.concatenate([snap1.labels, snap2.labels])
    )
    groups = np.concatenate([np.zeros(len(snap1), dtype=np.int64), np.ones(len(snap2), dtype=np.int64)])
    flags: list[str] = []
    dual = solve_dual(union, C, groups)
    if math.isinf(C) and not (dual.converged and dual.separable):
        flags.append("soft_margin_fallback")
        dual = solve_dual(union, fallback_C, groups)
    if not dual.converged:
        flags.append("unconverged")
    w, offsets = _recover(union, dual)
    separator = TwoPeriodSeparator(w, offsets[0], offsets[1])
    if _high_slack(union, w, np.where(groups == 0, offsets[0], offsets[1])):
        flags.append("high_slack")

    direction = orient(w / np.linalg.norm(w), union.points, union.labels)
    estimate = VelocityEstimate(Vec2.of(direction), separator.speed(dt), SVM_2PERIOD, tuple(flags))
    return separator, estimate


def _stair_levels(counters: CounterField) -> np.ndarray:
    """Sensors strictly between the lowest and highest counter levels.

    The extreme levels hold sensors the target never approached or always
    approached; they are plateaus, not stairs. Falls back to every sensor when
    too few remain.
    """
    c = counters.counts
    inner = (c > c.min()) & (c < c.max())
    if inner.sum() >= 3 and not np.all(c[inner] == c[inner][0]):
        return inner
    return np.ones(len(c), dtype=bool)


@weave.op()
def stairwise_plane_svm(
    field: SensorField,
    counters: CounterField,
    period: float = 1.0,
    fallback_C: float = DEFAULT_C,
) -> VelocityEstimate:
    """Velocity plane as the separator of the counter surface and its unit lift.

    Only sensors on interior counter levels enter the fit: the lowest and
    highest levels are plateaus with no stair edge on one side and are
    excluded (see ``_stair_levels``).
    """
    if counters.periods_elapsed < 2:
        raise BinsenseError("stairwise plane needs at least 2 elapsed periods")
    if len(counters) != len(field):
        raise BinsenseError(f"{len(counters)} counters for {len(field)} sensors")
    if counters.is_constant:
        raise BinsenseError("no gradient in counter field")

    keep = _stair_levels(counters)
    xy = field.positions[keep]
    xy = xy - xy.mean(axis=0)
    c = counters.counts[keep].astype(float)
    c = c - c.min()
    below = np.column_stack([xy, c])
    above = np.column_stack([xy, c + 1.0])
    points = LabeledPoints(np.vstack([below, above]), np.concatenate([-np.ones(len(c)), np.ones(len(c))]))

    flags: list[str] = []
    dual = solve_dual(points, math.inf)
    if not (dual.converged and dual.separable):
        flags.append("soft_margin_fallback")
        dual = solve_dual(points, fallback_C)
    if not dual.converged:
        flags.append("unconverged")
    separator = separator_from_dual(points, dual)
    w_xy, w_c = separator.w[:2], separator.w[2]
    norm_xy = float(np.linalg.norm(w_xy))
    if norm_xy == 0.0 or w_c == 0.0:
        raise EstimationError("separating plane is parallel to an axis; no velocity plane")

    # Counter gradient is -w_xy / w_c
    direction = -math.copysign(1.0, w_c) * w_xy / norm_xy
    if np.corrcoef(xy @ direction, c)[0, 1] < 0:
        direction = -direction
    speed = abs(w_c) / norm_xy / period
    return VelocityEstimate(Vec2.of(direction), speed, SVM_3D, tuple(flags))


@weave.op()
def multi_period_velocity(
    field: SensorField,
    snapshots: Sequence[Snapshot],
    C: float = DEFAULT_C,
) -> VelocityEstimate:
    """Per-period separators: averaged oriented normal, speed from the drift of the lines.

    Each line is located where it crosses the ray from the field centre along
    the averaged direction; the speed is the least-squares slope of those
    crossings over time.
    """
    normals, offsets, times = [], [], []
    flags: set[str] = set()
    for snap in snapshots:
        if not snap.has_both_signs:
            continue
        points = LabeledPoints.from_snapshot(field, snap)
        separator, dual = fit_separator(points, C)
        if not dual.converged:
            flags.add("unconverged")
        norm = float(np.linalg.norm(separator.w))
        normal = orient(separator.w / norm, points.points, points.labels)
        sign = 1.0 if normal @ separator.w > 0 else -1.0
        normals.append(normal)
        # The line is <normal, p> = offset
        offsets.append(-sign * separator.b / norm)
        times.append(snap.time)
    if len(normals) < 2:
        raise EstimationError("fewer than two periods with both signs present")

    mean_normal = np.mean(normals, axis=0)
    if np.linalg.norm(mean_normal) == 0.0:
        raise EstimationError("per-period normals cancel out")
    direction = mean_normal / np.linalg.norm(mean_normal)

    centre = field.bounds.center.as_array()
    normals_arr = np.asarray(normals)
    facing = normals_arr @ direction
    usable = facing > 0.1
    if usable.sum() < 2:
        raise EstimationError("per-period lines too oblique to the mean direction")
    crossings = (np.asarray(offsets)[usable] - normals_arr[usable] @ centre) / facing[usable]
    slope = float(np.polyfit(np.asarray(times)[usable], crossings, 1)[0])
    if slope < 0:
        flags.add("negative_drift")
    return VelocityEstimate(Vec2.of(direction), max(slope, 0.0), SVM_2D, tuple(sorted(flags)))
