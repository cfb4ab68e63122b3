"""Planar geometry, sensor fields, seed streams and the four target motion laws."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
import weave

from binsense.errors import BinsenseError


@dataclass(frozen=True)
class Vec2:
    """A finite point or vector in the plane (meters, or meters per second)."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise BinsenseError(f"Vec2 components must be finite, got ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @classmethod
    def of(cls, value: Vec2 | Sequence[float] | np.ndarray) -> Vec2:
        if isinstance(value, Vec2):
            return value
        x, y = value
        return cls(float(x), float(y))

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float) -> Vec2:
        return Vec2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self) -> Vec2:
        return Vec2(-self.x, -self.y)

    def dot(self, other: Vec2) -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: Vec2) -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def normalized(self) -> Vec2:
        length = self.norm()
        if length == 0.0:
            raise BinsenseError("cannot normalize the zero vector")
        return Vec2(self.x / length, self.y / length)

    def perp(self) -> Vec2:
        # Rotated +90 degrees
        return Vec2(-self.y, self.x)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def unit(angle: float) -> Vec2:
    return Vec2(math.cos(angle), math.sin(angle))


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned rectangle given by its min and max corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in values):
            raise BinsenseError(f"bounds must be finite, got {values}")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise BinsenseError(f"degenerate bounds {values}")

    @classmethod
    def of(cls, value: Bounds | Sequence[float]) -> Bounds:
        if isinstance(value, Bounds):
            return value
        return cls(*(float(v) for v in value))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def center(self) -> Vec2:
        return Vec2((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-rectangle membership for an (n, 2) array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (pts[:, 0] >= self.xmin)
            & (pts[:, 0] <= self.xmax)
            & (pts[:, 1] >= self.ymin)
            & (pts[:, 1] <= self.ymax)
        )


@dataclass(frozen=True, eq=False)
class SensorField:
    """Fixed, ordered sensor positions inside a rectangular region."""

    positions: np.ndarray
    bounds: Bounds

    def __post_init__(self) -> None:
        pts = np.array(self.positions, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise BinsenseError(f"sensor positions must have shape (n, 2), got {pts.shape}")
        if len(pts) < 3:
            raise BinsenseError(f"a sensor field needs at least 3 sensors, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise BinsenseError("sensor positions must be finite")
        if not np.all(self.bounds.contains(pts)):
            raise BinsenseError("every sensor must lie inside the field bounds")
        pts.setflags(write=False)
        object.__setattr__(self, "positions", pts)

    def __len__(self) -> int:
        return len(self.positions)

    def sensor(self, index: int) -> Vec2:
        return Vec2.of(self.positions[index])

    def project(self, direction: Vec2) -> np.ndarray:
        return self.positions @ direction.as_array()


COMPONENTS = ("field", "walk", "flip", "init")


@dataclass(frozen=True)
class SeedStreams:
    """Named, independent random streams derived from one scenario seed.

    Each component (and each Monte Carlo replication) gets its own spawn key,
    so any of them can be replayed without drawing the others.
    """

    seed: int
    replication: int | None = None

    def generator(self, component: str) -> np.random.Generator:
        if component not in COMPONENTS:
            raise BinsenseError(f"unknown seed stream {component!r}; expected one of {COMPONENTS}")
        index = COMPONENTS.index(component)
        key = (index,) if self.replication is None else (self.replication, index)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def for_replication(self, replication: int) -> SeedStreams:
        return SeedStreams(self.seed, replication)


@weave.op()
def sample_field(n: int, bounds: Bounds | Sequence[float], seed: int | np.random.Generator) -> SensorField:
    """Draw n sensor positions i.i.d. uniform over bounds."""
    bounds = Bounds.of(bounds)
    if n < 3:
        raise BinsenseError(f"a sensor field needs at least 3 sensors, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    low = [bounds.xmin, bounds.ymin]
    high = [bounds.xmax, bounds.ymax]
    return SensorField(rng.uniform(low, high, size=(n, 2)), bounds)


@dataclass(frozen=True)
class TargetState:
    position: Vec2
    velocity: Vec2
    time: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.time) or self.time < 0:
            raise BinsenseError(f"target time must be finite and >= 0, got {self.time}")

    def as_array(self) -> np.ndarray:
        return np.array([self.position.x, self.position.y, self.velocity.x, self.velocity.y])


@dataclass(frozen=True)
class ConstantVelocity:
    x0: Vec2
    v: Vec2

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", Vec2.of(self.x0))
        object.__setattr__(self, "v", Vec2.of(self.v))
        if self.v.norm() == 0.0:
            raise BinsenseError("constant-velocity model needs a nonzero velocity")


@dataclass(frozen=True)
class Leg:
    velocity: Vec2
    end_time: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity", Vec2.of(self.velocity))
        object.__setattr__(self, "end_time", float(self.end_time))


@dataclass(frozen=True)
class MultiLeg:
    """Piecewise constant velocity; each leg runs until its end_time.

    After the last end_time the target keeps the last leg's velocity.
    """

    x0: Vec2
    legs: tuple[Leg, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", Vec2.of(self.x0))
        legs = tuple(
            leg if isinstance(leg, Leg) else Leg(Vec2.of(leg[0]), float(leg[1])) for leg in self.legs
        )
        if not legs:
            raise BinsenseError("multi-leg model needs at least one leg")
        ends = [leg.end_time for leg in legs]
        if ends[0] <= 0 or any(b <= a for a, b in zip(ends, ends[1:])):
            raise BinsenseError(f"leg end times must be positive and strictly increasing, got {ends}")
        object.__setattr__(self, "legs", legs)


@dataclass(frozen=True)
class ConstantAcceleration:
    x0: Vec2
    v0: Vec2
    a0: Vec2

    def __post_init__(self) -> None:
        for name in ("x0", "v0", "a0"):
            object.__setattr__(self, name, Vec2.of(getattr(self, name)))


def cv_transition(period: float = 1.0) -> np.ndarray:
    """State transition of [x, y, vx, vy] under constant velocity over one period."""
    F = np.eye(4)
    F[0, 2] = F[1, 3] = period
    return F


def noise_factor(Q: np.ndarray) -> np.ndarray:
    """L with L @ L.T == Q; falls back to an eigen factor when Q is singular."""
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class GaussianRandomWalk:
    """Markov motion x_k | x_{k-1} ~ N(F x_{k-1}, Q) on the state [x, y, vx, vy]."""

    x0: Vec2
    v0: Vec2
    F: np.ndarray = field(default_factory=cv_transition)
    Q: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    period: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", Vec2.of(self.x0))
        object.__setattr__(self, "v0", Vec2.of(self.v0))
        F = np.array(self.F, dtype=float)
        Q = np.array(self.Q, dtype=float)
        if F.shape != (4, 4) or Q.shape != (4, 4):
            raise BinsenseError(f"F and Q must be 4x4, got {F.shape} and {Q.shape}")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Q))):
            raise BinsenseError("F and Q must be finite")
        scale = max(1.0, float(np.abs(Q).max()))
        if not np.allclose(Q, Q.T, atol=1e-12 * scale):
            raise BinsenseError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-10 * scale:
            raise BinsenseError("Q must be positive semi-definite")
        if not (math.isfinite(self.period) and self.period > 0):
            raise BinsenseError(f"period must be positive, got {self.period}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)

    def initial_state(self) -> TargetState:
        return TargetState(self.x0, self.v0, 0.0)


TrajectoryModel = Union[ConstantVelocity, MultiLeg, ConstantAcceleration, GaussianRandomWalk]


def trajectory_state(model: TrajectoryModel, t: float) -> TargetState:
    """Closed-form position and velocity of a deterministic model at time t."""
    if isinstance(model, GaussianRandomWalk):
        raise BinsenseError("stochastic model requires stepping")
    if not math.isfinite(t) or t < 0:
        raise BinsenseError(f"time must be finite and >= 0, got {t}")

    if isinstance(model, ConstantVelocity):
        return TargetState(model.x0 + t * model.v, model.v, t)

    if isinstance(model, ConstantAcceleration):
        # x_t = x0 + t v0 + t^2 a0, with the t^2 term carrying coefficient 1
        position = model.x0 + t * model.v0 + (t * t) * model.a0
        return TargetState(position, model.v0 + t * model.a0, t)

    if isinstance(model, MultiLeg):
        position = model.x0
        start = 0.0
        for leg in model.legs:
            if t < leg.end_time:
                return TargetState(position + (t - start) * leg.velocity, leg.velocity, t)
            position = position + (leg.end_time - start) * leg.velocity
            start = leg.end_time
        last = model.legs[-1].velocity
        return TargetState(position + (t - start) * last, last, t)

    raise BinsenseError(f"unknown trajectory model {type(model).__name__}")


def step_random_walk(
    state: TargetState,
    F: np.ndarray,
    Q: np.ndarray,
    rng: np.random.Generator,
    period: float = 1.0,
) -> TargetState:
    """One draw from N(F [pos; vel], Q), advancing time by one period."""
    mean = np.asarray(F, dtype=float) @ state.as_array()
    L = noise_factor(np.asarray(Q, dtype=float))
    nxt = mean + L @ rng.standard_normal(4)
    return TargetState(Vec2(nxt[0], nxt[1]), Vec2(nxt[2], nxt[3]), state.time + period)


def sample_times(n_samples: int, period: float = 1.0) -> np.ndarray:
    return np.arange(n_samples, dtype=float) * period


def simulate_truth(
    model: TrajectoryModel,
    times: Iterable[float],
    rng: np.random.Generator | None = None,
) -> list[TargetState]:
    """Ground-truth states at the given sample times.

    Random walks are stepped from their initial state, one period per sample,
    so ``times`` must be the walk's regular grid starting at 0.
    """
    times = [float(t) for t in times]
    if not isinstance(model, GaussianRandomWalk):
        return [trajectory_state(model, t) for t in times]

    if rng is None:
        raise BinsenseError("a random walk needs a generator to be simulated")
    expected = sample_times(len(times), model.period)
    if not np.allclose(times, expected):
        raise BinsenseError("random-walk sample times must be 0, period, 2*period, ...")
    states = [model.initial_state()]
    for _ in range(len(times) - 1):
        states.append(step_random_walk(states[-1], model.F, model.Q, rng, model.period))
    return states
