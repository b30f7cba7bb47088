"""
Topic-based publish/subscribe with per-topic token-bucket throttling and two
transports: hop-by-hop mesh unicast for bulk data and UWB-embedded payloads
for basic signaling.
"""

import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Deque, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from .errors import ConfigurationError, FrameDecodeError
from .swarm_model import NodeId
from .uwb_ranging import MAX_PAYLOAD

logger = logging.getLogger(__name__)

MAX_TOPIC_NAME = 48
ANNOUNCE_TYPE = 0x02
ANNOUNCE_HEADER = struct.Struct(">BHB")
ANNOUNCE_ENTRY = struct.Struct(">HB")
FLAG_SUBSCRIBER = 0x01
FLAG_PUBLISHER = 0x02


class Transport(Enum):
    MESH = "mesh"
    UWB_EMBEDDED = "uwb_embedded"
    AUTO = "auto"


class PublishResult(Enum):
    ACCEPTED = "accepted"
    THROTTLED = "throttled"
    OVERSIZE = "oversize"


@dataclass(frozen=True)
class Topic:
    name: str
    topic_id: int
    rate_limit: float = 0.0
    burst: int = 1
    transport: Transport = Transport.AUTO
    max_payload: int = MAX_PAYLOAD
    publish_rate: float = 1.0
    payload_size: int = 16

    def __post_init__(self):
        if len(self.name.encode("utf-8")) > MAX_TOPIC_NAME:
            raise ValueError(f"Topic name '{self.name}' longer than {MAX_TOPIC_NAME} bytes")
        if not 0 <= self.topic_id <= 0xFFFF:
            raise ValueError(f"topic_id {self.topic_id} does not fit 16 bits")
        if self.burst < 1:
            raise ValueError("burst must be >= 1")
        if self.transport is Transport.UWB_EMBEDDED and self.max_payload > MAX_PAYLOAD:
            raise ValueError(f"UWB-embedded topic '{self.name}' allows at most {MAX_PAYLOAD} bytes")


@dataclass(frozen=True)
class Message:
    topic_id: int
    publisher: NodeId
    seqno: int
    payload: bytes
    t_publish: float

    @property
    def key(self) -> Tuple[NodeId, int, int]:
        return (self.publisher, self.topic_id, self.seqno)


@dataclass
class TokenBucket:
    """Token bucket; rate 0 disables throttling. Starts full.

    The balance is kept as an exact fraction of the float inputs, so
    accepted <= burst + rate * T holds without rounding slack.
    """
    rate: float
    burst: int
    tokens: Optional[Fraction] = None
    last_refill: float = 0.0

    def __post_init__(self):
        self.tokens = Fraction(self.burst if self.tokens is None else self.tokens)

    def throttle_check(self, now: float) -> bool:
        """Refill for the elapsed time, then try to spend one token."""
        if self.rate == 0:
            return True
        elapsed = max(Fraction(0), Fraction(now) - Fraction(self.last_refill))
        self.tokens = min(Fraction(self.burst), self.tokens + Fraction(self.rate) * elapsed)
        self.last_refill = max(self.last_refill, now)
        if self.tokens >= 1:
            self.tokens -= 1
            return True
        return False


def throttle_check(bucket: TokenBucket, now: float) -> bool:
    return bucket.throttle_check(now)


def transport_select(topic: Topic, payload_len: int) -> Transport:
    """Resolve a topic's transport for a payload; Auto prefers UWB when it fits."""
    if topic.transport is not Transport.AUTO:
        return topic.transport
    return Transport.UWB_EMBEDDED if payload_len <= MAX_PAYLOAD else Transport.MESH


@dataclass(frozen=True)
class AnnounceEntry:
    topic_id: int
    subscriber: bool = False
    publisher: bool = False


@dataclass(frozen=True)
class Announce:
    node_id: NodeId
    entries: Tuple[AnnounceEntry, ...] = ()


def encode_announce(announce: Announce) -> bytes:
    if len(announce.entries) > 255:
        raise ValueError("An announce frame carries at most 255 entries")
    parts = [ANNOUNCE_HEADER.pack(ANNOUNCE_TYPE, announce.node_id, len(announce.entries))]
    for entry in announce.entries:
        flags = (FLAG_SUBSCRIBER if entry.subscriber else 0) | (FLAG_PUBLISHER if entry.publisher else 0)
        parts.append(ANNOUNCE_ENTRY.pack(entry.topic_id, flags))
    return b"".join(parts)


def decode_announce(data: bytes) -> Announce:
    if len(data) < ANNOUNCE_HEADER.size:
        raise FrameDecodeError(f"Announce frame truncated: {len(data)} bytes")
    frame_type, node_id, count = ANNOUNCE_HEADER.unpack_from(data)
    if frame_type != ANNOUNCE_TYPE:
        raise FrameDecodeError(f"Not an announce frame (type 0x{frame_type:02x})")
    expected = ANNOUNCE_HEADER.size + count * ANNOUNCE_ENTRY.size
    if len(data) != expected:
        raise FrameDecodeError(f"Announce frame should be {expected} bytes, got {len(data)}")
    entries = []
    for i in range(count):
        topic_id, flags = ANNOUNCE_ENTRY.unpack_from(data, ANNOUNCE_HEADER.size + i * ANNOUNCE_ENTRY.size)
        if flags & ~(FLAG_SUBSCRIBER | FLAG_PUBLISHER):
            raise FrameDecodeError(f"Unknown announce flags 0x{flags:02x}")
        entries.append(AnnounceEntry(topic_id, bool(flags & FLAG_SUBSCRIBER), bool(flags & FLAG_PUBLISHER)))
    return Announce(node_id, tuple(entries))


class TopicRegistry:
    """Topics of a scenario; ids are dense, starting at 1 in registration order."""

    def __init__(self, topics: Iterable[Topic] = ()):
        self._by_name: Dict[str, Topic] = {}
        self._by_id: Dict[int, Topic] = {}
        for topic in topics:
            self.add(topic)

    def add(self, topic: Topic):
        if topic.name in self._by_name:
            raise ConfigurationError(f"Duplicate topic name '{topic.name}'")
        self._by_name[topic.name] = topic
        self._by_id[topic.topic_id] = topic

    def get(self, name: str) -> Topic:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigurationError(f"Unregistered topic '{name}'") from None

    def by_id(self, topic_id: int) -> Topic:
        try:
            return self._by_id[topic_id]
        except KeyError:
            raise ConfigurationError(f"Unregistered topic id {topic_id}") from None

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda t: t.topic_id))

    def __len__(self) -> int:
        return len(self._by_id)


@dataclass
class TopicCounters:
    published: int = 0
    accepted: int = 0
    throttled: int = 0
    oversize: int = 0
    copies: int = 0
    delivered: int = 0
    in_flight: int = 0
    dropped: int = 0
    drop_reasons: Dict[str, int] = field(default_factory=dict)

    @property
    def pdr(self) -> Optional[float]:
        return self.delivered / self.copies if self.copies else None

    def as_dict(self) -> Dict[str, object]:
        return {
            "published": self.published,
            "accepted": self.accepted,
            "throttled": self.throttled,
            "oversize": self.oversize,
            "copies": self.copies,
            "delivered": self.delivered,
            "in_flight": self.in_flight,
            "dropped": self.dropped,
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
            "pdr": self.pdr,
        }


class DeliveryLedger:
    """Per-topic publish and delivery accounting, one entry per subscriber copy."""

    def __init__(self):
        self.topics: Dict[int, TopicCounters] = {}

    def counters(self, topic_id: int) -> TopicCounters:
        return self.topics.setdefault(topic_id, TopicCounters())

    def record_publish(self, topic_id: int, result: PublishResult):
        c = self.counters(topic_id)
        c.published += 1
        if result is PublishResult.ACCEPTED:
            c.accepted += 1
        elif result is PublishResult.THROTTLED:
            c.throttled += 1
        else:
            c.oversize += 1

    def copy_created(self, topic_id: int):
        c = self.counters(topic_id)
        c.copies += 1
        c.in_flight += 1

    def copy_delivered(self, topic_id: int):
        c = self.counters(topic_id)
        c.in_flight -= 1
        c.delivered += 1

    def copy_dropped(self, topic_id: int, reason: str):
        c = self.counters(topic_id)
        c.in_flight -= 1
        c.dropped += 1
        c.drop_reasons[reason] = c.drop_reasons.get(reason, 0) + 1

    def conserved(self) -> bool:
        return all(
            c.published == c.accepted + c.throttled + c.oversize
            and c.copies == c.delivered + c.in_flight + c.dropped
            for c in self.topics.values()
        )


@dataclass(frozen=True)
class Subscription:
    node: NodeId
    topic_id: int
    topic_name: str


@dataclass(frozen=True)
class MeshCopy:
    message: Message
    destination: NodeId


@dataclass
class PublishOutcome:
    result: PublishResult
    message: Optional[Message] = None
    mesh_copies: List[MeshCopy] = field(default_factory=list)
    uwb_peers: List[NodeId] = field(default_factory=list)


class CommsBus:
    """Publish/subscribe endpoint of one node."""

    def __init__(
        self,
        node_id: NodeId,
        registry: TopicRegistry,
        ledger: DeliveryLedger,
        queue_depth: int = 8,
        expiry: float = 10.0,
    ):
        self.node_id = node_id
        self.registry = registry
        self.ledger = ledger
        self.queue_depth = queue_depth
        self.expiry = expiry
        self.subscriptions: Set[int] = set()
        self.advertised: Set[int] = set()
        self.inbox: List[Message] = []
        self._buckets: Dict[int, TokenBucket] = {}
        self._seqnos: Dict[int, int] = {}
        self._remote: Dict[int, Dict[NodeId, float]] = {}
        self._uwb_queues: Dict[NodeId, Deque[Message]] = {}
        self._received: Set[Tuple[NodeId, int, int]] = set()

    def subscribe(self, topic_name: str) -> Subscription:
        topic = self.registry.get(topic_name)
        self.subscriptions.add(topic.topic_id)
        return Subscription(self.node_id, topic.topic_id, topic.name)

    def advertise(self, topic_name: str):
        self.advertised.add(self.registry.get(topic_name).topic_id)

    def announcement(self) -> Announce:
        topic_ids = sorted(self.subscriptions | self.advertised)
        return Announce(self.node_id, tuple(
            AnnounceEntry(t, t in self.subscriptions, t in self.advertised) for t in topic_ids
        ))

    def learn(self, announce: Announce, now: float):
        """Record the subscriptions a remote node announced over the mesh."""
        if announce.node_id == self.node_id:
            return
        for entry in announce.entries:
            holders = self._remote.setdefault(entry.topic_id, {})
            if entry.subscriber:
                holders[announce.node_id] = now
            else:
                holders.pop(announce.node_id, None)

    def known_subscribers(self, topic_id: int, now: float) -> List[NodeId]:
        holders = self._remote.get(topic_id, {})
        return sorted(n for n, seen in holders.items() if seen >= now - self.expiry)

    def publish(self, topic_name: str, payload: bytes, now: float) -> PublishOutcome:
        """
        Publish a payload on a topic.

        Oversize payloads and throttled publishes are refused at the source.
        Accepted messages fan out to every discovered subscriber: mesh copies
        are returned for forwarding, UWB copies wait in per-peer queues for
        the next ranging session with that peer.
        """
        topic = self.registry.get(topic_name)
        if len(payload) > topic.max_payload:
            self.ledger.record_publish(topic.topic_id, PublishResult.OVERSIZE)
            return PublishOutcome(PublishResult.OVERSIZE)

        bucket = self._buckets.setdefault(
            topic.topic_id, TokenBucket(topic.rate_limit, topic.burst, last_refill=now)
        )
        if not bucket.throttle_check(now):
            self.ledger.record_publish(topic.topic_id, PublishResult.THROTTLED)
            return PublishOutcome(PublishResult.THROTTLED)

        self.ledger.record_publish(topic.topic_id, PublishResult.ACCEPTED)
        seqno = self._seqnos.get(topic.topic_id, 0)
        self._seqnos[topic.topic_id] = seqno + 1
        message = Message(topic.topic_id, self.node_id, seqno, bytes(payload), now)
        outcome = PublishOutcome(PublishResult.ACCEPTED, message)

        subscribers = [n for n in self.known_subscribers(topic.topic_id, now) if n != self.node_id]
        if not subscribers:
            self.ledger.copy_created(topic.topic_id)
            self.ledger.copy_dropped(topic.topic_id, "no_subscriber")
            return outcome

        transport = transport_select(topic, len(payload))
        for subscriber in subscribers:
            self.ledger.copy_created(topic.topic_id)
            if transport is Transport.MESH:
                outcome.mesh_copies.append(MeshCopy(message, subscriber))
            else:
                self._enqueue_uwb(subscriber, message)
                outcome.uwb_peers.append(subscriber)
        return outcome

    def _enqueue_uwb(self, peer: NodeId, message: Message):
        queue = self._uwb_queues.setdefault(peer, deque())
        if len(queue) >= self.queue_depth:
            stale = queue.popleft()
            self.ledger.copy_dropped(stale.topic_id, "queue_overflow")
        queue.append(message)

    def take_uwb_payload(self, peer: NodeId) -> Optional[Message]:
        """Oldest queued UWB payload for a ranging counterpart, if any."""
        queue = self._uwb_queues.get(peer)
        if not queue:
            return None
        return queue.popleft()

    def pending_uwb(self) -> int:
        return sum(len(q) for q in self._uwb_queues.values())

    def drain_uwb_queues(self, reason: str) -> int:
        """Drop every payload still waiting for a ranging session."""
        drained = 0
        for peer in sorted(self._uwb_queues):
            queue = self._uwb_queues[peer]
            while queue:
                self.ledger.copy_dropped(queue.popleft().topic_id, reason)
                drained += 1
        return drained

    def deliver(self, message: Message, transport: Transport, now: float) -> bool:
        """Hand an arriving copy to this node; duplicates and unsubscribed topics are dropped."""
        if message.topic_id not in self.subscriptions:
            self.ledger.copy_dropped(message.topic_id, "not_subscribed")
            return False
        if message.key in self._received:
            self.ledger.copy_dropped(message.topic_id, "duplicate")
            return False
        self._received.add(message.key)
        self.inbox.append(message)
        self.ledger.copy_delivered(message.topic_id)
        logger.debug(
            "Node %d received %s/%d from %d via %s at %.6f",
            self.node_id, self.registry.by_id(message.topic_id).name,
            message.seqno, message.publisher, transport.value, now,
        )
        return True


@dataclass(frozen=True)
class HopOutcome:
    next_hop: Optional[NodeId]
    delivered: bool
    reason: Optional[str] = None


class MeshForwarder:
    """One unicast hop: route lookup plus an independent link draw, no retransmission."""

    def __init__(
        self,
        next_hop: Callable[[NodeId, NodeId, float], Optional[NodeId]],
        link_prob: Callable[[NodeId, NodeId, float], float],
    ):
        self._next_hop = next_hop
        self._link_prob = link_prob

    def hop(self, at: NodeId, dest: NodeId, now: float, rng: np.random.Generator) -> HopOutcome:
        next_hop = self._next_hop(at, dest, now)
        if next_hop is None:
            return HopOutcome(None, False, "no_route")
        p = self._link_prob(at, next_hop, now)
        if p >= 1.0:
            return HopOutcome(next_hop, True)
        if p <= 0.0 or rng.random() >= p:
            return HopOutcome(next_hop, False, "link_loss")
        return HopOutcome(next_hop, True)
