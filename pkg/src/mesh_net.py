"""
BATMAN-style mesh layer: originator messages (OGMs), transmit-quality (TQ)
routing, peer auto-discovery and gateway selection over a lossy medium.
"""

import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, Iterable, Optional, Set, Tuple

from .errors import FrameDecodeError
from .swarm_model import NodeId

logger = logging.getLogger(__name__)

TQ_MAX = 255
OGM_TYPE = 0x01
OGM_FRAME = struct.Struct(">BHIBBB")


@dataclass(frozen=True)
class LinkModel:
    """Logistic delivery-probability model around a reference range.

    shape='disk' gives a unit-disk channel (p = 1 within reference_range,
    0 beyond) for perfect-link experiments.
    """
    reference_range: float = 50.0
    falloff_width: float = 5.0
    shape: str = "logistic"

    def __post_init__(self):
        if self.reference_range <= 0 or self.falloff_width <= 0:
            raise ValueError("LinkModel needs reference_range > 0 and falloff_width > 0")
        if self.shape not in ("logistic", "disk"):
            raise ValueError(f"Unknown link shape '{self.shape}'")


@dataclass(frozen=True)
class MeshConfig:
    ogm_interval: float = 1.0
    ttl: int = 16
    window: int = 64
    route_expiry: float = 10.0
    peer_expiry: float = 10.0


@dataclass(frozen=True)
class Ogm:
    """Originator message."""
    origin: NodeId
    seqno: int
    tq: int
    ttl: int
    gateway: bool = False

    def __post_init__(self):
        if not 0 <= self.tq <= TQ_MAX:
            raise ValueError(f"tq must be in [0, {TQ_MAX}], got {self.tq}")
        if self.ttl < 0:
            raise ValueError("ttl must be non-negative")


def encode_ogm(ogm: Ogm) -> bytes:
    """Serialize an OGM into its 10-byte big-endian frame."""
    return OGM_FRAME.pack(OGM_TYPE, ogm.origin, ogm.seqno, ogm.tq, ogm.ttl, int(ogm.gateway))


def decode_ogm(data: bytes) -> Ogm:
    """Parse a 10-byte OGM frame."""
    if len(data) != OGM_FRAME.size:
        raise FrameDecodeError(f"OGM frame must be {OGM_FRAME.size} bytes, got {len(data)}")
    frame_type, origin, seqno, tq, ttl, gateway = OGM_FRAME.unpack(data)
    if frame_type != OGM_TYPE:
        raise FrameDecodeError(f"Not an OGM frame (type 0x{frame_type:02x})")
    if gateway not in (0, 1):
        raise FrameDecodeError(f"Invalid gateway flag {gateway}")
    return Ogm(origin=origin, seqno=seqno, tq=tq, ttl=ttl, gateway=bool(gateway))


def link_delivery_prob(model: LinkModel, distance: float, attenuation: float = 0.0) -> float:
    """
    Probability that a Wi-Fi frame crosses a link.

    Args:
        model: Link model parameters
        distance: Distance between the endpoints in meters
        attenuation: Active interference factor covering either endpoint

    Returns:
        Delivery probability in [0, 1]
    """
    if model.shape == "disk":
        base = 1.0 if distance <= model.reference_range else 0.0
    else:
        z = (distance - model.reference_range) / model.falloff_width
        base = 0.0 if z > 700.0 else 1.0 / (1.0 + math.exp(z))
    return base * (1.0 - attenuation)


class SeqnoWindow:
    """Ring of the last W sequence numbers received for one (origin, neighbor)."""

    def __init__(self, size: int):
        self._ring: Deque[int] = deque(maxlen=size)
        self._members: Set[int] = set()

    def __contains__(self, seqno: int) -> bool:
        return seqno in self._members

    def add(self, seqno: int):
        if len(self._ring) == self._ring.maxlen:
            self._members.discard(self._ring[0])
        self._ring.append(seqno)
        self._members.add(seqno)

    def count_between(self, lo: int, hi: int) -> int:
        return sum(1 for s in self._members if lo <= s <= hi)


@dataclass
class RouteEntry:
    next_hop: NodeId
    tq: int
    last_seen: float
    ttl: int


class RoutingTable:
    """Per-node originator table with TQ-based next-hop selection."""

    def __init__(self, owner: NodeId, window: int = 64, expiry: float = 10.0):
        self.owner = owner
        self.window = window
        self.expiry = expiry
        self.routes: Dict[NodeId, RouteEntry] = {}
        self._windows: Dict[Tuple[NodeId, NodeId], SeqnoWindow] = {}
        self._forwarded: Dict[NodeId, SeqnoWindow] = {}
        self._newest: Dict[NodeId, int] = {}
        self._first: Dict[NodeId, int] = {}

    def link_quality(self, neighbor: NodeId) -> int:
        """LQ of a direct neighbor, from its own OGMs received directly."""
        ring = self._windows.get((neighbor, neighbor))
        if ring is None:
            return 0
        newest = self._newest[neighbor]
        span = min(self.window, newest - self._first[neighbor] + 1)
        received = ring.count_between(newest - self.window + 1, newest)
        return TQ_MAX * received // span

    def _is_live(self, entry: RouteEntry, now: float) -> bool:
        return now - entry.last_seen <= self.expiry

    def _prefers(self, tq: int, ttl: int, neighbor: NodeId, current: RouteEntry) -> bool:
        if tq != current.tq:
            return tq > current.tq
        if ttl != current.ttl:
            return ttl > current.ttl
        return neighbor < current.next_hop

    def process_ogm(self, ogm: Ogm, from_neighbor: NodeId, now: float) -> Optional[Ogm]:
        """
        Account for an OGM received from a direct neighbor.

        Args:
            ogm: The received originator message
            from_neighbor: Neighbor that transmitted it
            now: Current simulation time in seconds

        Returns:
            The OGM to rebroadcast, or None
        """
        origin = ogm.origin
        if origin == self.owner:
            return None

        newest = self._newest.get(origin)
        if newest is not None and ogm.seqno <= newest - self.window:
            logger.debug("Node %d dropped stale OGM %d/%d", self.owner, origin, ogm.seqno)
            return None

        ring = self._windows.setdefault((origin, from_neighbor), SeqnoWindow(self.window))
        if ogm.seqno in ring:
            return None

        ring.add(ogm.seqno)
        if newest is None:
            self._first[origin] = ogm.seqno
            self._newest[origin] = ogm.seqno
        elif ogm.seqno > newest:
            self._newest[origin] = ogm.seqno

        tq = ogm.tq * self.link_quality(from_neighbor) // TQ_MAX

        current = self.routes.get(origin)
        if current is not None and not self._is_live(current, now):
            del self.routes[origin]
            current = None

        if current is not None and current.next_hop == from_neighbor:
            if tq == 0:
                del self.routes[origin]
            else:
                current.tq, current.ttl, current.last_seen = tq, ogm.ttl, now
        elif tq > 0 and (current is None or self._prefers(tq, ogm.ttl, from_neighbor, current)):
            self.routes[origin] = RouteEntry(from_neighbor, tq, now, ogm.ttl)

        selected = self.routes.get(origin)
        if selected is None or selected.next_hop != from_neighbor:
            return None
        # Only the first copy from the selected next hop is forwarded.
        forwarded = self._forwarded.setdefault(origin, SeqnoWindow(self.window))
        if ogm.seqno in forwarded or ogm.ttl == 0:
            return None
        forwarded.add(ogm.seqno)
        return Ogm(origin, ogm.seqno, tq, ogm.ttl - 1, ogm.gateway)

    def route_next_hop(self, dest: NodeId, now: float) -> Optional[NodeId]:
        entry = self.routes.get(dest)
        if entry is None or not self._is_live(entry, now):
            return None
        return entry.next_hop

    def purge(self, now: float):
        for origin in [o for o, e in self.routes.items() if not self._is_live(e, now)]:
            del self.routes[origin]

    def live_routes(self, now: float) -> Dict[NodeId, RouteEntry]:
        return {o: e for o, e in sorted(self.routes.items()) if self._is_live(e, now)}

    def best_gateway(self, gateways: Iterable[NodeId], now: float) -> Optional[NodeId]:
        """Gateway with maximal tq among live routes, lowest id on ties."""
        best: Optional[Tuple[int, NodeId]] = None
        for gateway in gateways:
            entry = self.routes.get(gateway)
            if entry is None or not self._is_live(entry, now):
                continue
            key = (-entry.tq, gateway)
            if best is None or key < best:
                best = key
        return None if best is None else best[1]


@dataclass
class PeerEntry:
    last_seen: float
    is_gateway: bool = False


class PeerTable:
    """Nodes visible through the mesh; this set stands in for middleware discovery."""

    def __init__(self, owner: NodeId, expiry: float = 10.0):
        self.owner = owner
        self.expiry = expiry
        self.peers: Dict[NodeId, PeerEntry] = {}

    def observe(self, node: NodeId, now: float, is_gateway: Optional[bool] = None):
        if node == self.owner:
            return
        entry = self.peers.get(node)
        if entry is None:
            self.peers[node] = PeerEntry(now, bool(is_gateway))
            return
        entry.last_seen = max(entry.last_seen, now)
        if is_gateway is not None:
            entry.is_gateway = is_gateway

    def discovered_peers(self, now: float) -> FrozenSet[NodeId]:
        return frozenset(n for n, e in self.peers.items() if e.last_seen >= now - self.expiry)

    def known_gateways(self, now: float) -> FrozenSet[NodeId]:
        return frozenset(
            n for n, e in self.peers.items()
            if e.is_gateway and e.last_seen >= now - self.expiry
        )

    def purge(self, now: float):
        for node in [n for n, e in self.peers.items() if e.last_seen < now - self.expiry]:
            del self.peers[node]


@dataclass
class MeshAgent:
    """Mesh state of one node: its OGM sequence, routes and discovered peers."""
    node_id: NodeId
    is_gateway: bool = False
    config: MeshConfig = field(default_factory=MeshConfig)
    seqno: int = 0

    def __post_init__(self):
        self.routes = RoutingTable(self.node_id, self.config.window, self.config.route_expiry)
        self.peers = PeerTable(self.node_id, self.config.peer_expiry)

    def originate(self) -> Ogm:
        """Next own OGM, full quality."""
        ogm = Ogm(self.node_id, self.seqno, TQ_MAX, self.config.ttl, self.is_gateway)
        self.seqno = (self.seqno + 1) & 0xFFFFFFFF
        return ogm

    def receive(self, ogm: Ogm, from_neighbor: NodeId, now: float) -> Optional[Ogm]:
        if ogm.origin == self.node_id:
            return None
        self.peers.observe(from_neighbor, now)
        self.peers.observe(ogm.origin, now, ogm.gateway)
        return self.routes.process_ogm(ogm, from_neighbor, now)

    def best_gateway(self, now: float) -> Optional[NodeId]:
        return self.routes.best_gateway(self.peers.known_gateways(now), now)
