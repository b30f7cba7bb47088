"""
Ground-truth world model: node identities, trajectories, clocks, obstacles
and Wi-Fi interference windows.

All frames share one orientation, so poses reduce to translations.
"""

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from typing_extensions import Self

NodeId = int

MAX_DRIFT_PPM = 100.0


class Frame(Enum):
    """Reference frame of a known or estimated position."""
    GLOBAL = "global"
    RELATIVE = "relative"


@dataclass(frozen=True)
class Position:
    """A point in the shared world frame, in meters."""
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"Position components must be finite: {self}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> Self:
        if len(values) == 2:
            return cls(float(values[0]), float(values[1]), 0.0)
        if len(values) != 3:
            raise ValueError(f"Expected 2 or 3 coordinates, got {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def distance_to(self, other: "Position") -> float:
        return math.dist(self.as_tuple(), other.as_tuple())

    def __add__(self, other: "Position") -> "Position":
        return Position(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Position") -> "Position":
        return Position(self.x - other.x, self.y - other.y, self.z - other.z)


ORIGIN = Position(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear path given as (time in seconds, Position) waypoints."""
    waypoints: Tuple[Tuple[float, Position], ...]

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("A trajectory needs at least one waypoint")
        times = tuple(t for t, _ in self.waypoints)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("Waypoint times must be strictly increasing")
        object.__setattr__(self, "_times", times)

    @classmethod
    def stationary(cls, position: Position) -> Self:
        return cls(((0.0, position),))

    @property
    def times(self) -> Tuple[float, ...]:
        return self._times


@dataclass(frozen=True)
class ClockModel:
    """Local oscillator: constant offset (ns) and drift (ppm)."""
    offset: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if abs(self.drift) > MAX_DRIFT_PPM:
            raise ValueError(f"Clock drift {self.drift} ppm exceeds ±{MAX_DRIFT_PPM} ppm")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, inclusive on every face."""
    lo: Position
    hi: Position

    def __post_init__(self):
        if self.hi.x < self.lo.x or self.hi.y < self.lo.y or self.hi.z < self.lo.z:
            raise ValueError(f"Box extents must be non-negative: {self.lo} .. {self.hi}")

    def contains(self, p: Position) -> bool:
        return (self.lo.x <= p.x <= self.hi.x
                and self.lo.y <= p.y <= self.hi.y
                and self.lo.z <= p.z <= self.hi.z)


@dataclass(frozen=True)
class InterferenceWindow:
    """Wi-Fi interference over a region during [start, end)."""
    start: float
    end: float
    region: Box
    attenuation: float

    def __post_init__(self):
        if not 0.0 <= self.attenuation <= 1.0:
            raise ValueError(f"Attenuation must be in [0, 1], got {self.attenuation}")
        if self.end < self.start:
            raise ValueError("Interference window ends before it starts")

    def is_active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class World:
    """Static environment: obstacles for NLOS and interference schedule."""
    obstacles: Tuple[Box, ...] = ()
    interference_windows: Tuple[InterferenceWindow, ...] = ()
    relative_frame_origin: Position = ORIGIN

    def active_windows(self, t: float) -> List[int]:
        """Indices of the interference windows active at time t."""
        return [i for i, w in enumerate(self.interference_windows) if w.is_active(t)]

    def attenuation_at(self, p: Position, active: Iterable[int]) -> float:
        """Strongest attenuation among the given active windows covering p."""
        worst = 0.0
        for index in active:
            window = self.interference_windows[index]
            if window.region.contains(p):
                worst = max(worst, window.attenuation)
        return worst


@dataclass(frozen=True)
class NodeConfig:
    """Static description of one swarm member."""
    id: NodeId
    trajectory: Trajectory
    clock: ClockModel = field(default_factory=ClockModel)
    is_gateway: bool = False
    is_anchor: bool = False
    anchor_frame: Frame = Frame.GLOBAL
    has_altimeter: bool = False
    altimeter_sigma: float = 0.0


def position_at(trajectory: Trajectory, t: float) -> Position:
    """
    Interpolate a trajectory at time t.

    Queries outside the waypoint span clamp to the nearest endpoint
    (hovering vehicle).
    """
    waypoints = trajectory.waypoints
    if t <= waypoints[0][0]:
        return waypoints[0][1]
    if t >= waypoints[-1][0]:
        return waypoints[-1][1]

    index = bisect.bisect_right(trajectory.times, t)
    t0, p0 = waypoints[index - 1]
    t1, p1 = waypoints[index]
    if t == t0:
        return p0
    alpha = (t - t0) / (t1 - t0)
    return Position(
        p0.x + alpha * (p1.x - p0.x),
        p0.y + alpha * (p1.y - p0.y),
        p0.z + alpha * (p1.z - p0.z),
    )


def local_time(clock: ClockModel, t_true: float) -> float:
    """Reading of a node's clock (ns) at true time t_true (ns)."""
    return t_true * (1.0 + clock.drift * 1e-6) + clock.offset


def _segment_hits_box(a: Position, b: Position, box: Box) -> bool:
    t_enter, t_exit = 0.0, 1.0
    for origin, end, lo, hi in (
        (a.x, b.x, box.lo.x, box.hi.x),
        (a.y, b.y, box.lo.y, box.hi.y),
        (a.z, b.z, box.lo.z, box.hi.z),
    ):
        delta = end - origin
        if delta == 0.0:
            if origin < lo or origin > hi:
                return False
            continue
        t1 = (lo - origin) / delta
        t2 = (hi - origin) / delta
        if t1 > t2:
            t1, t2 = t2, t1
        t_enter = max(t_enter, t1)
        t_exit = min(t_exit, t2)
        if t_enter > t_exit:
            return False
    return True


def is_nlos(world: World, a: Position, b: Position) -> bool:
    """
    Check whether the segment a-b crosses any obstacle (slab test).

    Touching a face counts as a crossing.
    """
    # Canonical endpoint order keeps the result symmetric bit for bit.
    if b.as_tuple() < a.as_tuple():
        a, b = b, a
    return any(_segment_hits_box(a, b, box) for box in world.obstacles)


def known_position(node: NodeConfig, world: World, t: float) -> Position:
    """Position an anchor knows about itself, expressed in its seed frame."""
    truth = position_at(node.trajectory, t)
    if node.anchor_frame is Frame.RELATIVE:
        return truth - world.relative_frame_origin
    return truth
