"""
Deterministic discrete-event engine: event queue, keyed random streams and
metrics collection.
"""

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .comms_bus import DeliveryLedger
from .errors import SchedulingError
from .swarm_model import NodeId

METRIC_NAMES = ("loc_error_m", "localized", "routes", "ranging_success")
RMSE_WINDOW_FRACTION = 0.25


class EventKind(Enum):
    OGM_EMIT = "ogm_emit"
    OGM_ARRIVE = "ogm_arrive"
    RANGING_TICK = "ranging_tick"
    UWB_FRAME_ARRIVE = "uwb_frame_arrive"
    SESSION_TIMEOUT = "session_timeout"
    PUBLISH_TICK = "publish_tick"
    MESH_DATA_ARRIVE = "mesh_data_arrive"
    LOCALIZATION_TICK = "localization_tick"
    METRICS_SAMPLE = "metrics_sample"
    INTERFERENCE_EDGE = "interference_edge"


@dataclass(frozen=True)
class Event:
    t: float
    seq: int
    kind: EventKind
    node: Optional[NodeId] = None
    data: Any = None


class EventQueue:
    """Min-heap of events ordered by (time, insertion counter)."""

    def __init__(self):
        self._heap: List[Tuple[float, int, Event]] = []
        self._seq = 0
        self.now = 0.0
        self.processed = 0

    def schedule(self, t: float, kind: EventKind, node: Optional[NodeId] = None, data: Any = None) -> Event:
        if t < self.now:
            raise SchedulingError(f"{kind.value} scheduled at {t!r} before current time {self.now!r}")
        event = Event(t, self._seq, kind, node, data)
        self._seq += 1
        heapq.heappush(self._heap, (t, event.seq, event))
        return event

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Optional[Event]:
        if not self._heap:
            return None
        _, _, event = heapq.heappop(self._heap)
        self.now = event.t
        self.processed += 1
        return event

    def pending(self) -> List[Event]:
        return [entry[2] for entry in sorted(self._heap)]

    def __len__(self) -> int:
        return len(self._heap)


class StreamPurpose(IntEnum):
    OGM_PHASE = 1
    MESH_LINK = 2
    MESH_DATA = 3
    UWB_CHANNEL = 4
    UWB_JITTER = 5
    RANGING_PHASE = 6
    ALTIMETER = 7
    PAYLOAD = 8
    PUBLISH_PHASE = 9


class RandomStreams:
    """Counter-based generators keyed by (master seed, node, purpose).

    A stream's draws depend only on its key, never on which other streams
    exist or how their draws interleave.
    """

    def __init__(self, master_seed: int):
        if not 0 <= master_seed < 2 ** 64:
            raise ValueError("master seed must fit in 64 bits")
        self.master_seed = master_seed
        self._streams: Dict[Tuple[NodeId, StreamPurpose], np.random.Generator] = {}

    def key(self, node: NodeId, purpose: StreamPurpose) -> int:
        return self.master_seed | (node << 64) | (int(purpose) << 96)

    def stream(self, node: NodeId, purpose: StreamPurpose) -> np.random.Generator:
        generator = self._streams.get((node, purpose))
        if generator is None:
            generator = np.random.Generator(np.random.Philox(key=self.key(node, purpose)))
            self._streams[(node, purpose)] = generator
        return generator


def rmse(values: Iterable[float]) -> Optional[float]:
    """Root-mean-square of the values; None for an empty sequence."""
    data = [v for v in values if v is not None]
    if not data:
        return None
    return math.sqrt(sum(v * v for v in data) / len(data))


@dataclass(frozen=True)
class MetricRow:
    time_s: float
    node_id: NodeId
    metric: str
    value: Optional[float]


@dataclass
class RangingStats:
    attempts: int = 0
    successes: int = 0
    latencies: List[float] = field(default_factory=list)

    @property
    def success_ratio(self) -> Optional[float]:
        return self.successes / self.attempts if self.attempts else None


@dataclass
class MetricsReport:
    rows: List[MetricRow]
    summary: Dict[str, Any]


@dataclass
class NodeSample:
    """What the simulator knows about one node at a sampling instant."""
    node_id: NodeId
    error: Optional[float]
    localized: bool
    routes: int
    is_seed: bool


class MetricsSink:
    """Collects time series and counters during a run."""

    def __init__(self):
        self.rows: List[MetricRow] = []
        self.ledger = DeliveryLedger()
        self.ranging: Dict[NodeId, RangingStats] = {}

    def ranging_stats(self, node: NodeId) -> RangingStats:
        return self.ranging.setdefault(node, RangingStats())

    def record_attempt(self, node: NodeId):
        self.ranging_stats(node).attempts += 1

    def record_success(self, node: NodeId, latency: float):
        stats = self.ranging_stats(node)
        stats.successes += 1
        stats.latencies.append(latency)

    def sample_metrics(self, now: float, samples: Sequence[NodeSample]) -> List[MetricRow]:
        """
        Append one sampling instant to the time series.

        Unlocalized nodes get a missing loc_error_m value, never zero.
        """
        added: List[MetricRow] = []
        for sample in sorted(samples, key=lambda s: s.node_id):
            stats = self.ranging.get(sample.node_id)
            success = stats.success_ratio if stats else None
            added.extend((
                MetricRow(now, sample.node_id, "loc_error_m", sample.error if sample.localized else None),
                MetricRow(now, sample.node_id, "localized", 1.0 if sample.localized else 0.0),
                MetricRow(now, sample.node_id, "routes", float(sample.routes)),
                MetricRow(now, sample.node_id, "ranging_success", success),
            ))
        self.rows.extend(added)
        return added

    def final_window_errors(self, duration: float, exclude: Iterable[NodeId] = ()) -> Dict[NodeId, List[float]]:
        """Localization errors per node over the last quarter of the run."""
        start = duration * (1.0 - RMSE_WINDOW_FRACTION)
        skip = set(exclude)
        errors: Dict[NodeId, List[float]] = {}
        for row in self.rows:
            if row.metric != "loc_error_m" or row.time_s < start or row.node_id in skip:
                continue
            if row.value is not None:
                errors.setdefault(row.node_id, []).append(row.value)
        return errors

    def ranging_summary(self) -> Dict[str, Any]:
        attempts = sum(s.attempts for s in self.ranging.values())
        successes = sum(s.successes for s in self.ranging.values())
        latencies = [lat for node in sorted(self.ranging) for lat in self.ranging[node].latencies]
        return {
            "attempts": attempts,
            "successes": successes,
            "success_ratio": successes / attempts if attempts else None,
            "mean_latency_s": sum(latencies) / len(latencies) if latencies else None,
        }
