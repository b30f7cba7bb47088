"""
UWB double-sided two-way ranging (DS-TWR) with payload piggybacking.

Sessions are driven by the simulator's event loop; this module holds the
estimator, the channel model, the wire codec, the session state machine and
the round-robin peer scheduler.
"""

import math
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np

from .errors import FrameDecodeError, MalformedSessionError, OversizePayloadError
from .swarm_model import ClockModel, NodeId, Position, World, is_nlos, local_time

SPEED_OF_LIGHT_M_PER_NS = 0.299792458
MAX_PAYLOAD = 64
FRAME_HEADER = struct.Struct(">BHHIBH")


class FrameType(IntEnum):
    POLL = 0x10
    RESPONSE = 0x11
    FINAL = 0x12


@dataclass(frozen=True)
class UwbFrame:
    """One ranging frame, optionally carrying a single topic payload.

    topic_id 0 means nothing is carried; a non-zero topic_id with an empty
    payload is an empty message on that topic.
    """
    frame_type: FrameType
    src: NodeId
    dst: NodeId
    session_seqno: int
    topic_id: int = 0
    payload: bytes = b""


def encode_frame(frame: UwbFrame) -> bytes:
    """Serialize a ranging frame: 12-byte header followed by the payload."""
    if len(frame.payload) > MAX_PAYLOAD:
        raise OversizePayloadError(
            f"UWB payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}"
        )
    header = FRAME_HEADER.pack(
        int(frame.frame_type), frame.src, frame.dst, frame.session_seqno,
        len(frame.payload), frame.topic_id,
    )
    return header + bytes(frame.payload)


def decode_frame(data: bytes) -> UwbFrame:
    """Parse a ranging frame produced by encode_frame."""
    if len(data) < FRAME_HEADER.size:
        raise FrameDecodeError(f"UWB frame truncated: {len(data)} bytes")
    raw_type, src, dst, seqno, length, topic_id = FRAME_HEADER.unpack_from(data)
    try:
        frame_type = FrameType(raw_type)
    except ValueError:
        raise FrameDecodeError(f"Unknown UWB frame type 0x{raw_type:02x}") from None
    if length > MAX_PAYLOAD:
        raise FrameDecodeError(f"Payload length {length} exceeds {MAX_PAYLOAD}")
    if len(data) != FRAME_HEADER.size + length:
        raise FrameDecodeError(
            f"Frame length mismatch: header says {length} payload bytes, "
            f"got {len(data) - FRAME_HEADER.size}"
        )
    return UwbFrame(frame_type, src, dst, seqno, topic_id, bytes(data[FRAME_HEADER.size:]))


@dataclass(frozen=True)
class RangingTimestamps:
    """DS-TWR durations in local-clock nanoseconds."""
    ra: float
    rb: float
    da: float
    db: float


def ds_twr_tof(ts: RangingTimestamps) -> float:
    """
    Asymmetric DS-TWR time-of-flight estimate.

    Args:
        ts: Round-trip (Ra, Rb) and reply (Da, Db) durations in ns

    Returns:
        Time of flight in nanoseconds
    """
    denominator = ts.ra + ts.rb + ts.da + ts.db
    if denominator <= 0:
        raise MalformedSessionError(f"Non-positive DS-TWR denominator: {ts}")
    return (ts.ra * ts.rb - ts.da * ts.db) / denominator


def tof_to_distance(tof_ns: float) -> float:
    return tof_ns * SPEED_OF_LIGHT_M_PER_NS


def exchange_timestamps(
    tof_ns: float,
    reply_a_ns: float,
    reply_b_ns: float,
    clock_a: ClockModel,
    clock_b: ClockModel,
) -> RangingTimestamps:
    """
    Timestamps of a poll/response/final exchange read on each node's clock.

    True times are counted from the session epoch (poll transmission);
    reply_a/reply_b are the true turnaround durations of initiator and
    responder.
    """
    t_poll_tx = 0.0
    t_poll_rx = t_poll_tx + tof_ns
    t_resp_tx = t_poll_rx + reply_b_ns
    t_resp_rx = t_resp_tx + tof_ns
    t_final_tx = t_resp_rx + reply_a_ns
    t_final_rx = t_final_tx + tof_ns

    ra = local_time(clock_a, t_resp_rx) - local_time(clock_a, t_poll_tx)
    da = local_time(clock_a, t_final_tx) - local_time(clock_a, t_resp_rx)
    rb = local_time(clock_b, t_final_rx) - local_time(clock_b, t_resp_tx)
    db = local_time(clock_b, t_resp_tx) - local_time(clock_b, t_poll_rx)
    return RangingTimestamps(ra=ra, rb=rb, da=da, db=db)


@dataclass(frozen=True)
class UwbChannel:
    sigma_los: float = 0.10
    nlos_bias_mean: float = 0.5
    max_range: float = 60.0

    def __post_init__(self):
        if self.sigma_los < 0 or self.nlos_bias_mean < 0:
            raise ValueError("UWB channel noise parameters must be non-negative")


def measure_range(
    world: World,
    channel: UwbChannel,
    a: Position,
    b: Position,
    rng: np.random.Generator,
) -> Optional[float]:
    """
    Draw one range observation between a and b.

    Returns:
        Measured distance in meters, or None when b is beyond max_range
    """
    d_true = a.distance_to(b)
    if d_true > channel.max_range:
        return None
    measured = d_true + channel.sigma_los * float(rng.standard_normal())
    if channel.nlos_bias_mean > 0 and is_nlos(world, a, b):
        measured += float(rng.exponential(channel.nlos_bias_mean))
    return max(0.0, measured)


def schedule_next(peers: Iterable[NodeId], last_ranged: Mapping[NodeId, float]) -> Optional[NodeId]:
    """Peer ranged least recently (never-ranged first), lowest id on ties."""
    best = None
    for peer in peers:
        key = (last_ranged.get(peer, -math.inf), peer)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


class RangingScheduler:
    """Round-robin ranging target selection over mesh-discovered peers.

    select() is the hook a concurrent-ranging scheme would replace.
    """

    def __init__(self):
        self.last_ranged: Dict[NodeId, float] = {}
        self.session_counts: Dict[NodeId, int] = {}

    def select(self, peers: Iterable[NodeId]) -> Optional[NodeId]:
        return schedule_next(peers, self.last_ranged)

    def mark_attempt(self, peer: NodeId, now: float):
        self.last_ranged[peer] = now
        self.session_counts[peer] = self.session_counts.get(peer, 0) + 1


class SessionState(Enum):
    IDLE = "idle"
    POLL_SENT = "poll_sent"
    RESPONSE_SENT = "response_sent"
    FINAL_SENT = "final_sent"
    COMPLETE = "complete"
    FAILED = "failed"


_TRANSITIONS = {
    SessionState.IDLE: {SessionState.POLL_SENT, SessionState.FAILED},
    SessionState.POLL_SENT: {SessionState.RESPONSE_SENT, SessionState.FAILED},
    SessionState.RESPONSE_SENT: {SessionState.FINAL_SENT, SessionState.FAILED},
    SessionState.FINAL_SENT: {SessionState.COMPLETE, SessionState.FAILED},
    SessionState.COMPLETE: set(),
    SessionState.FAILED: set(),
}


@dataclass(frozen=True)
class RangeMeasurement:
    initiator: NodeId
    responder: NodeId
    distance: float
    t: float
    topic_id: int = 0
    payload: Optional[bytes] = None

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("distance must be non-negative")
        if self.payload is not None and len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload exceeds {MAX_PAYLOAD} bytes")


@dataclass
class RangingSession:
    """State of one poll/response/final exchange.

    True event times are kept in nanoseconds from the session epoch so the
    estimator sees full precision regardless of absolute simulation time.
    """
    initiator: NodeId
    responder: NodeId
    seqno: int
    started_at: float
    state: SessionState = SessionState.IDLE
    tof_ns: Optional[float] = None
    reply_a_ns: Optional[float] = None
    reply_b_ns: Optional[float] = None
    timestamps: Optional[RangingTimestamps] = None
    carried: List[object] = field(default_factory=list)
    inbound: Dict[NodeId, object] = field(default_factory=dict)

    def advance(self, new_state: SessionState):
        if new_state not in _TRANSITIONS[self.state]:
            raise MalformedSessionError(
                f"Illegal ranging transition {self.state.value} -> {new_state.value} "
                f"(session {self.initiator}->{self.responder} #{self.seqno})"
            )
        self.state = new_state

    @property
    def finished(self) -> bool:
        return self.state in (SessionState.COMPLETE, SessionState.FAILED)

    def response_tx_ns(self) -> float:
        return self.tof_ns + self.reply_b_ns

    def final_tx_ns(self) -> float:
        return 2.0 * self.tof_ns + self.reply_b_ns + self.reply_a_ns

    def final_rx_ns(self) -> float:
        return self.final_tx_ns() + self.tof_ns

    def complete(self, clock_a: ClockModel, clock_b: ClockModel) -> float:
        """Take the clock readings, run the estimator and return the distance."""
        self.timestamps = exchange_timestamps(
            self.tof_ns, self.reply_a_ns, self.reply_b_ns, clock_a, clock_b
        )
        distance = max(0.0, tof_to_distance(ds_twr_tof(self.timestamps)))
        self.advance(SessionState.COMPLETE)
        return distance
