"""Projection pursuit estimate of the velocity plane.

The counter field is treated as a single-index model Y_i = n(<x_i, theta>):
the direction theta minimises the residual of a kernel-smoothed, monotone
profile, and the speed is the step width of the integer stair template that
best fits the counters along that direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import weave
from scipy.optimize import minimize_scalar

from binsense.errors import BinsenseError
from binsense.geometry import SensorField, Vec2, unit
from binsense.observe import CounterField
from binsense.svm import PPR, VelocityEstimate

EPS_DEN = 1e-30
EPS_TIE = 1e-9
DEFAULT_GRID = 360

KernelName = Literal["gaussian", "epanechnikov"]


@dataclass(frozen=True)
class KernelConfig:
    h: float
    kernel: KernelName = "gaussian"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.h) and self.h > 0):
            raise BinsenseError(f"bandwidth h must be positive, got {self.h}")
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise BinsenseError(f"unknown kernel {self.kernel!r}")

    @classmethod
    def default_for(cls, field: SensorField, kernel: KernelName = "gaussian") -> KernelConfig:
        """Bandwidth of field diagonal / sqrt(N)."""
        return cls(field.bounds.diagonal / math.sqrt(len(field)), kernel)

    def weights(self, z: np.ndarray) -> np.ndarray:
        """Kernel weights along the last axis.

        Gaussian weights are scaled so the nearest point has weight 1; the
        common factor cancels in the smoother and keeps far queries finite.
        """
        z = np.asarray(z, dtype=float) / self.h
        if self.kernel == "gaussian":
            sq = z * z
            if sq.size:
                sq = sq - sq.min(axis=-1, keepdims=True)
            return np.exp(-0.5 * sq)
        return np.where(np.abs(z) < 1.0, 0.75 * (1.0 - z * z), 0.0)


@dataclass(frozen=True)
class StairTemplate:
    """Integer staircase n(u) = i on [offset + (i-1) v, offset + i v), clipped to [0, levels]."""

    offset: float
    step_width: float
    levels: int
    residual: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.step_width) and self.step_width > 0):
            raise BinsenseError(f"step width must be positive, got {self.step_width}")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        steps = np.floor((u - self.offset) / self.step_width) + 1.0
        return np.clip(np.where(u >= self.offset, steps, 0.0), 0, self.levels)


def kernel_smooth(projections: np.ndarray, counts: np.ndarray, u: float, cfg: KernelConfig) -> float:
    """Nadaraya-Watson estimate of the counter profile at projection u."""
    projections = np.asarray(projections, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if projections.size == 0:
        raise BinsenseError("no local mass: empty data")
    w = cfg.weights(projections - u)
    total = float(w.sum())
    if total <= EPS_DEN:
        raise BinsenseError(f"no local mass at u={u}")
    return float(w @ counts / total)


def _smooth_at_data(projections: np.ndarray, counts: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    W = cfg.weights(projections[:, None] - projections[None, :])
    total = W.sum(axis=1)
    if np.any(total <= EPS_DEN):
        raise BinsenseError("no local mass at a sensor projection")
    return (W @ counts) / total


def monotone_envelope(values) -> np.ndarray:
    """Running maximum; the smallest non-decreasing sequence above values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise BinsenseError("monotone envelope of an empty sequence")
    return np.maximum.accumulate(values)


def profile_residual(field: SensorField, counters: CounterField, angle: float, cfg: KernelConfig) -> float:
    """Sum of squared residuals of the monotone smoothed profile along unit(angle)."""
    proj = field.project(unit(angle))
    order = np.argsort(proj, kind="stable")
    p = proj[order]
    y = counters.counts[order].astype(float)
    fitted = monotone_envelope(_smooth_at_data(p, y, cfg))
    return float(np.sum((fitted - y) ** 2))


def circular_mean(angles) -> float:
    angles = np.asarray(angles, dtype=float)
    s, c = float(np.sin(angles).sum()), float(np.cos(angles).sum())
    if math.hypot(s, c) < 1e-12:
        # Antipodal ties have no mean direction; keep the first one
        return float(angles[0] % (2 * math.pi))
    return math.atan2(s, c) % (2 * math.pi)


def resolve_ties(angles, residuals, eps: float = EPS_TIE) -> tuple[float, int]:
    """Minimising angle, or the circular mean of every angle within eps of the minimum."""
    residuals = np.asarray(residuals, dtype=float)
    best = residuals.min()
    tied = np.flatnonzero(residuals <= best + eps)
    if len(tied) == 1:
        return float(np.asarray(angles)[tied[0]]), 1
    return circular_mean(np.asarray(angles)[tied]), len(tied)


def _check_counters(field: SensorField, counters: CounterField) -> None:
    if len(counters) != len(field):
        raise BinsenseError(f"{len(counters)} counters for {len(field)} sensors")
    if counters.is_constant:
        raise BinsenseError("no gradient in counter field")


@weave.op()
def fit_direction(
    field: SensorField,
    counters: CounterField,
    cfg: KernelConfig | None = None,
    grid: int = DEFAULT_GRID,
    refine: bool = True,
) -> Vec2:
    """Grid search of the profile residual over unit directions, then a local refinement."""
    _check_counters(field, counters)
    if grid < 8:
        raise BinsenseError(f"direction grid needs at least 8 points, got {grid}")
    cfg = cfg or KernelConfig.default_for(field)

    angles = np.arange(grid) * (2 * math.pi / grid)
    residuals = np.array([profile_residual(field, counters, a, cfg) for a in angles])
    angle, n_tied = resolve_ties(angles, residuals)
    if refine and n_tied == 1:
        step = 2 * math.pi / grid
        result = minimize_scalar(
            lambda a: profile_residual(field, counters, a, cfg),
            bounds=(angle - step, angle + step),
            method="bounded",
            options={"xatol": 1e-4},
        )
        if result.fun < residuals.min():
            angle = float(result.x)
    return unit(angle)


def _best_level_shift(base: np.ndarray, counts: np.ndarray, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """For each template row, the integer shift k minimising sum (clip(base + k) - counts)^2."""
    centre = np.round(np.median(counts[None, :] - base, axis=1))
    best_res = np.full(len(base), np.inf)
    best_k = centre.copy()
    for delta in (-2, -1, 0, 1, 2):
        k = centre + delta
        fitted = np.clip(base + k[:, None], 0, levels)
        res = np.sum((fitted - counts[None, :]) ** 2, axis=1)
        better = res < best_res
        best_res = np.where(better, res, best_res)
        best_k = np.where(better, k, best_k)
    return best_k, best_res


def _template_search(
    proj: np.ndarray,
    counts: np.ndarray,
    levels: int,
    widths: np.ndarray,
    phases: np.ndarray,
) -> tuple[float, float, float]:
    """Best (width, offset, residual) over a width x phase grid."""
    origin = proj.min()
    V, P = np.meshgrid(widths, phases, indexing="ij")
    V, P = V.ravel(), P.ravel()
    base = np.floor((proj[None, :] - origin) / V[:, None] + P[:, None])
    k, res = _best_level_shift(base, counts, levels)
    i = int(np.argmin(res))
    # n(u) = floor((u - origin)/v + phase) + k  <=>  offset = origin - v (phase + k - 1)
    offset = origin - V[i] * (P[i] + k[i] - 1.0)
    return float(V[i]), float(offset), float(res[i])


@weave.op()
def fit_stair_template(
    field: SensorField,
    counters: CounterField,
    direction: Vec2,
    coarse: int = 80,
    fine: int = 40,
    phases: int = 24,
) -> StairTemplate:
    """Two-stage grid search of the stair template along a fixed direction."""
    _check_counters(field, counters)
    direction = direction.normalized()
    proj = field.project(direction)
    counts = counters.counts.astype(float)
    extent = float(proj.max() - proj.min())
    if extent <= 0.0:
        raise BinsenseError("degenerate projection range")
    levels = max(counters.periods_elapsed, 1)

    distinct = np.unique(counters.counts)
    if len(distinct) <= 2:
        # One visible edge: the width is only bounded below by the plateaus on each side
        low = proj[counters.counts == distinct[0]]
        high = proj[counters.counts == distinct[-1]]
        bound = max(float(low.max() - low.min()), float(high.max() - high.min()), extent / (levels * 50))
        edge = (float(low.max()) + float(high.min())) / 2
        return StairTemplate(edge - bound * int(distinct[0]), bound, levels, flags=("unidentifiable",))

    v_min = extent / (levels * 50)
    v_max = extent
    widths = np.geomspace(v_min, v_max, coarse)
    phase_grid = np.arange(phases) / phases
    v, _, _ = _template_search(proj, counts, levels, widths, phase_grid)

    # Second stage: bracket the coarse optimum by its grid neighbours
    ratio = (v_max / v_min) ** (1.0 / (coarse - 1))
    fine_widths = np.linspace(max(v / ratio, v_min), min(v * ratio, v_max), fine)
    fine_phases = np.arange(2 * phases) / (2 * phases)
    v, offset, residual = _template_search(proj, counts, levels, fine_widths, fine_phases)
    return StairTemplate(offset, v, levels, residual)


def fit_speed(field: SensorField, counters: CounterField, direction: Vec2, period: float = 1.0) -> float:
    """Speed in m/s from the fitted step width (meters per period)."""
    if not period > 0:
        raise BinsenseError(f"period must be positive, got {period}")
    return fit_stair_template(field, counters, direction).step_width / period


@weave.op()
def estimate_velocity_ppr(
    field: SensorField,
    counters: CounterField,
    cfg: KernelConfig | None = None,
    grid: int = DEFAULT_GRID,
    period: float = 1.0,
) -> VelocityEstimate:
    direction = fit_direction(field, counters, cfg, grid)
    template = fit_stair_template(field, counters, direction)
    return VelocityEstimate(direction, template.step_width / period, PPR, template.flags)
