"""
Cooperative localization: range smoothing, linear trilateration, damped
Gauss-Newton refinement and anchor-seeded propagation through the swarm.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from typing_extensions import Self

from .errors import DegenerateGeometry, InsufficientAnchors, LocalizationError
from .swarm_model import Frame, NodeId, Position
from .uwb_ranging import RangeMeasurement

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e8
COINCIDENCE_EPS = 1e-12
ANCHOR_NUDGE = 1e-9


class SolverMode(Enum):
    PLANAR_2D = "planar2d"
    FULL_3D = "full3d"


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50
    step_tolerance: float = 1e-6
    damping: float = 1e-3
    mode: SolverMode = SolverMode.PLANAR_2D
    smoothing_window: int = 5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_tolerance <= 0 or self.damping <= 0:
            raise ValueError("step_tolerance and damping must be > 0")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")

    @property
    def required_neighbors(self) -> int:
        return 3 if self.mode is SolverMode.PLANAR_2D else 4


@dataclass(frozen=True)
class PositionEstimate:
    position: Optional[Position]
    frame: Frame = Frame.GLOBAL
    localized: bool = False
    hop_depth: int = 0
    residual: float = 0.0

    @classmethod
    def unlocalized(cls) -> Self:
        return cls(position=None, localized=False)

    @classmethod
    def seed(cls, position: Position, frame: Frame = Frame.GLOBAL) -> Self:
        return cls(position=position, frame=frame, localized=True, hop_depth=0, residual=0.0)


class RangeGraph:
    """Last M range measurements per ordered (initiator, responder) pair."""

    def __init__(self, window: int = 5):
        self.window = window
        self._buffers: Dict[Tuple[NodeId, NodeId], Deque[float]] = {}
        self._neighbors: Dict[NodeId, Set[NodeId]] = {}

    def add(self, measurement: RangeMeasurement):
        key = (measurement.initiator, measurement.responder)
        buffer = self._buffers.setdefault(key, deque(maxlen=self.window))
        buffer.appendleft(measurement.distance)
        self._neighbors.setdefault(key[0], set()).add(key[1])
        self._neighbors.setdefault(key[1], set()).add(key[0])

    def buffer(self, i: NodeId, j: NodeId) -> List[float]:
        """Newest-first measurements of the ordered pair (i, j)."""
        return list(self._buffers.get((i, j), ()))

    def smoothed_range(self, i: NodeId, j: NodeId) -> Optional[float]:
        """Median of both directions' buffered measurements."""
        pooled = self.buffer(i, j) + self.buffer(j, i)
        if not pooled:
            return None
        return max(0.0, float(np.median(pooled)))

    def pairs(self) -> List[Tuple[NodeId, NodeId]]:
        """Unordered node pairs with at least one buffered measurement."""
        return sorted({(min(i, j), max(i, j)) for i, j in self._buffers})

    def neighbors(self, i: NodeId) -> List[NodeId]:
        return sorted(self._neighbors.get(i, ()))

    def nodes(self) -> List[NodeId]:
        return sorted(self._neighbors)


def smoothed_range(graph: RangeGraph, i: NodeId, j: NodeId) -> Optional[float]:
    return graph.smoothed_range(i, j)


def horizontal_projection(d: float, dz: float, sigma: float) -> Optional[float]:
    """
    Project a 3D range onto the horizontal plane using a known altitude gap.

    Returns 0 when the range is shorter than |dz| by less than 3 sigma and
    None when the range is inconsistent with the altitude gap.
    """
    gap = abs(dz)
    if d >= gap:
        return math.sqrt(d * d - dz * dz)
    if d >= gap - 3.0 * sigma:
        return 0.0
    return None


def _coordinates(anchors: Sequence[Position], mode: SolverMode) -> np.ndarray:
    points = np.array([a.as_tuple() for a in anchors], dtype=float)
    return points[:, :2] if mode is SolverMode.PLANAR_2D else points


def _required(mode: SolverMode) -> int:
    return 3 if mode is SolverMode.PLANAR_2D else 4


def _to_position(x: np.ndarray, mode: SolverMode, altitude: float) -> Position:
    if mode is SolverMode.PLANAR_2D:
        return Position(float(x[0]), float(x[1]), float(altitude))
    return Position(float(x[0]), float(x[1]), float(x[2]))


def trilaterate_linear(
    anchors: Sequence[Position],
    ranges: Sequence[float],
    mode: SolverMode = SolverMode.PLANAR_2D,
    altitude: float = 0.0,
) -> Position:
    """
    Closed-form least-squares position from ranges to known points.

    The first range equation is subtracted from the others and the resulting
    linear system is solved through its normal equations. In planar mode the
    ranges must already be horizontal and z is set to `altitude`.

    Raises:
        InsufficientAnchors: fewer than 3 (planar) / 4 (3D) anchors
        DegenerateGeometry: normal matrix condition number above 1e8
    """
    if len(anchors) != len(ranges):
        raise ValueError("anchors and ranges must have the same length")
    if len(anchors) < _required(mode):
        raise InsufficientAnchors(
            f"{mode.value} needs {_required(mode)} anchors, got {len(anchors)}"
        )

    points = _coordinates(anchors, mode)
    d = np.asarray(ranges, dtype=float)
    ref = points[0]
    shifted = points - ref

    a_matrix = 2.0 * shifted[1:]
    b_vector = d[0] ** 2 - d[1:] ** 2 + np.sum(shifted[1:] ** 2, axis=1)
    normal = a_matrix.T @ a_matrix
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.linalg.cond(normal)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise DegenerateGeometry(f"Anchor geometry is degenerate (condition {condition:.3g})")

    solution = np.linalg.solve(normal, a_matrix.T @ b_vector) + ref
    return _to_position(solution, mode, altitude)


def cost(x: np.ndarray, anchors: np.ndarray, ranges: np.ndarray) -> float:
    """Sum of squared range residuals."""
    residuals = np.linalg.norm(anchors - x, axis=1) - ranges
    return float(residuals @ residuals)


def jacobian(x: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Rows (x - a_i)^T / ||x - a_i||: derivative of each distance w.r.t. x."""
    diff = x - anchors
    return diff / np.linalg.norm(diff, axis=1)[:, None]


def refine_gauss_newton(
    init: Position,
    anchors: Sequence[Position],
    ranges: Sequence[float],
    cfg: SolverConfig,
    altitude: Optional[float] = None,
) -> PositionEstimate:
    """
    Damped Gauss-Newton (Levenberg) minimization of the range residuals.

    Args:
        init: Starting point
        anchors: Reference positions
        ranges: Measured ranges (horizontal in planar mode)
        cfg: Solver settings
        altitude: z of the solution in planar mode (defaults to init.z)

    Returns:
        Estimate with the final position and RMS range residual
    """
    mode = cfg.mode
    if len(anchors) < _required(mode):
        raise InsufficientAnchors(
            f"{mode.value} needs {_required(mode)} anchors, got {len(anchors)}"
        )
    z = init.z if altitude is None else altitude
    points = _coordinates(anchors, mode)
    d = np.asarray(ranges, dtype=float)
    x = init.as_array()[: points.shape[1]].copy()

    lam = cfg.damping
    current = cost(x, points, d)
    identity = np.eye(points.shape[1])

    for _ in range(cfg.max_iters):
        distances = np.linalg.norm(points - x, axis=1)
        if np.any(distances < COINCIDENCE_EPS):
            x[0] += ANCHOR_NUDGE
            current = cost(x, points, d)
            continue

        jac = jacobian(x, points)
        residuals = distances - d
        gradient = jac.T @ residuals
        step = np.linalg.solve(jac.T @ jac + lam * identity, -gradient)

        trial = x + step
        trial_cost = cost(trial, points, d)
        if trial_cost <= current:
            x, current = trial, trial_cost
            lam = max(lam / 10.0, 1e-12)
            if np.linalg.norm(step) < cfg.step_tolerance:
                break
        else:
            lam = min(lam * 10.0, 1e12)
            if np.linalg.norm(step) < cfg.step_tolerance:
                break

    residual = math.sqrt(current / len(d))
    return PositionEstimate(
        position=_to_position(x, mode, z),
        localized=True,
        residual=residual,
    )


def _solve_node(
    node: NodeId,
    graph: RangeGraph,
    estimates: Mapping[NodeId, PositionEstimate],
    cfg: SolverConfig,
    altitude: Optional[float],
    projection_sigma: float,
) -> Optional[PositionEstimate]:
    used: List[NodeId] = []
    for neighbor in graph.neighbors(node):
        estimate = estimates.get(neighbor)
        if estimate is None or not estimate.localized:
            continue
        if graph.smoothed_range(node, neighbor) is None:
            continue
        used.append(neighbor)
    if len(used) < cfg.required_neighbors:
        return None

    if cfg.mode is SolverMode.PLANAR_2D and altitude is None:
        altitude = float(np.mean([estimates[n].position.z for n in used]))

    anchors: List[Position] = []
    ranges: List[float] = []
    kept: List[NodeId] = []
    for neighbor in used:
        position = estimates[neighbor].position
        distance = graph.smoothed_range(node, neighbor)
        if cfg.mode is SolverMode.PLANAR_2D:
            distance = horizontal_projection(distance, altitude - position.z, projection_sigma)
            if distance is None:
                continue
        anchors.append(position)
        ranges.append(distance)
        kept.append(neighbor)
    if len(kept) < cfg.required_neighbors:
        return None

    start = trilaterate_linear(anchors, ranges, cfg.mode, altitude if altitude is not None else 0.0)
    refined = refine_gauss_newton(start, anchors, ranges, cfg, altitude)

    frames = {estimates[n].frame for n in kept}
    return PositionEstimate(
        position=refined.position,
        frame=Frame.GLOBAL if frames == {Frame.GLOBAL} else Frame.RELATIVE,
        localized=True,
        hop_depth=1 + max(estimates[n].hop_depth for n in kept),
        residual=refined.residual,
    )


def propagate_localization(
    graph: RangeGraph,
    estimates: Mapping[NodeId, PositionEstimate],
    seeds: Iterable[NodeId],
    cfg: SolverConfig,
    altitudes: Optional[Mapping[NodeId, float]] = None,
    projection_sigma: float = 0.0,
) -> Dict[NodeId, PositionEstimate]:
    """
    Spread localization outward from the seed nodes until nothing changes.

    Each round visits nodes in ascending id order; an unlocalized node with
    enough localized ranged neighbors is solved and immediately becomes
    usable by later nodes in the same round.

    Args:
        graph: Smoothed pairwise ranges
        estimates: Current estimates; seeds must be localized
        seeds: Nodes with known positions
        cfg: Solver settings
        altitudes: Altimeter readings per node (planar mode)
        projection_sigma: Noise scale for the horizontal projection clamp band

    Returns:
        Estimates for every known node, unlocalized ones included
    """
    altitudes = altitudes or {}
    result: Dict[NodeId, PositionEstimate] = dict(estimates)
    for seed in seeds:
        estimate = result.get(seed)
        if estimate is None or not estimate.localized:
            raise ValueError(f"Seed node {seed} is not localized")

    nodes = sorted(set(result) | set(graph.nodes()))
    for node in nodes:
        result.setdefault(node, PositionEstimate.unlocalized())

    changed = True
    while changed:
        changed = False
        for node in nodes:
            if result[node].localized:
                continue
            try:
                solved = _solve_node(
                    node, graph, result, cfg, altitudes.get(node), projection_sigma
                )
            except LocalizationError as e:
                logger.debug("Node %d skipped this round: %s", node, e)
                continue
            if solved is None:
                continue
            result[node] = solved
            changed = True

    return {node: result[node] for node in nodes}
