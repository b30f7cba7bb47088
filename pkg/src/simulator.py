"""
Scenario execution: node processes and event handlers on top of the
discrete-event kernel.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Set, Tuple

from .comms_bus import (
    CommsBus,
    Message,
    MeshForwarder,
    Topic,
    TopicRegistry,
    Transport,
    encode_announce,
    decode_announce,
)
from .errors import MeshLocError
from .log import TRACE
from .mesh_net import LinkModel, MeshAgent, MeshConfig, decode_ogm, encode_ogm, link_delivery_prob
from .relative_loc import PositionEstimate, RangeGraph, SolverConfig, propagate_localization
from .sim_kernel import (
    Event,
    EventKind,
    EventQueue,
    MetricsReport,
    MetricsSink,
    NodeSample,
    RandomStreams,
    StreamPurpose,
    rmse,
)
from .swarm_model import (
    Frame,
    NodeConfig,
    NodeId,
    Position,
    World,
    known_position,
    position_at,
)
from .uwb_ranging import (
    SPEED_OF_LIGHT_M_PER_NS,
    FrameType,
    RangeMeasurement,
    RangingScheduler,
    RangingSession,
    SessionState,
    UwbChannel,
    UwbFrame,
    decode_frame,
    encode_frame,
    measure_range,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    """Timing and sizing of the protocol stack (seconds unless noted)."""
    ogm_interval: float = 1.0
    ogm_ttl: int = 16
    seqno_window: int = 64
    route_expiry: float = 10.0
    peer_expiry: float = 10.0
    ogm_hop_latency: float = 1e-3
    data_hop_latency: float = 2e-3
    ranging_rate: float = 10.0
    turnaround: float = 300e-6
    turnaround_jitter: float = 10e-6
    session_timeout: float = 5e-3
    localization_cadence: float = 1.0
    metrics_rate: float = 10.0
    uwb_queue_depth: int = 8

    def __post_init__(self):
        # Reply times must stay positive for every jitter draw.
        if not 0 <= self.turnaround_jitter < self.turnaround:
            raise ValueError(
                f"turnaround_jitter ({self.turnaround_jitter}) must be in [0, turnaround={self.turnaround})"
            )

    def mesh_config(self) -> MeshConfig:
        return MeshConfig(
            ogm_interval=self.ogm_interval,
            ttl=self.ogm_ttl,
            window=self.seqno_window,
            route_expiry=self.route_expiry,
            peer_expiry=self.peer_expiry,
        )


@dataclass(frozen=True)
class TopicPlan:
    topic: Topic
    publishers: Tuple[NodeId, ...] = ()
    subscribers: Tuple[NodeId, ...] = ()


@dataclass(frozen=True)
class SimulationSetup:
    """Everything a run needs, already validated."""
    nodes: Tuple[NodeConfig, ...]
    world: World = field(default_factory=World)
    link: LinkModel = field(default_factory=LinkModel)
    channel: UwbChannel = field(default_factory=UwbChannel)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    topics: Tuple[TopicPlan, ...] = ()
    duration: float = 0.0
    seed: int = 0
    schema_version: int = 1


class NodeProcess:
    """Protocol state owned by one simulated node."""

    def __init__(self, config: NodeConfig, protocol: ProtocolConfig, bus: CommsBus):
        self.config = config
        self.id = config.id
        self.mesh = MeshAgent(config.id, config.is_gateway, protocol.mesh_config())
        self.bus = bus
        self.scheduler = RangingScheduler()
        self.active_session: Optional[Tuple[NodeId, int]] = None
        self.session_seqno = 0
        self.known_peers: FrozenSet[NodeId] = frozenset()


class Simulator:
    """Runs one scenario with one seed; single-threaded and deterministic."""

    def __init__(self, setup: SimulationSetup):
        self.setup = setup
        self.queue = EventQueue()
        self.streams = RandomStreams(setup.seed)
        self.metrics = MetricsSink()
        self.registry = TopicRegistry(plan.topic for plan in setup.topics)
        self.graph = RangeGraph(setup.solver.smoothing_window)
        self.estimates: Dict[NodeId, PositionEstimate] = {}
        self.sessions: Dict[Tuple[NodeId, int], RangingSession] = {}
        self._awaited_session: Optional[Tuple[NodeId, int]] = None
        self._awaited_result: Optional[Tuple[RangeMeasurement, RangeMeasurement]] = None
        self._response_overrides: Dict[Tuple[NodeId, int], Message] = {}
        self._active_windows: Set[int] = set()
        self._started = False

        self.nodes: Dict[NodeId, NodeProcess] = {}
        for config in sorted(setup.nodes, key=lambda c: c.id):
            bus = CommsBus(
                config.id, self.registry, self.metrics.ledger,
                setup.protocol.uwb_queue_depth, setup.protocol.peer_expiry,
            )
            self.nodes[config.id] = NodeProcess(config, setup.protocol, bus)

        for plan in setup.topics:
            for subscriber in plan.subscribers:
                self.nodes[subscriber].bus.subscribe(plan.topic.name)
            for publisher in plan.publishers:
                self.nodes[publisher].bus.advertise(plan.topic.name)

        self.forwarder = MeshForwarder(self._route_lookup, self._link_prob_between)
        self._handlers = {
            EventKind.OGM_EMIT: self._on_ogm_emit,
            EventKind.OGM_ARRIVE: self._on_ogm_arrive,
            EventKind.RANGING_TICK: self._on_ranging_tick,
            EventKind.UWB_FRAME_ARRIVE: self._on_uwb_frame_arrive,
            EventKind.SESSION_TIMEOUT: self._on_session_timeout,
            EventKind.PUBLISH_TICK: self._on_publish_tick,
            EventKind.MESH_DATA_ARRIVE: self._on_mesh_data_arrive,
            EventKind.LOCALIZATION_TICK: self._on_localization_tick,
            EventKind.METRICS_SAMPLE: self._on_metrics_sample,
            EventKind.INTERFERENCE_EDGE: self._on_interference_edge,
        }

    # ------------------------------------------------------------------ run

    @property
    def now(self) -> float:
        return self.queue.now

    def run(self) -> MetricsReport:
        """Process events in (time, seq) order until the duration elapses."""
        if self._started:
            raise MeshLocError("A Simulator instance can only run once")
        self._started = True
        duration = self.setup.duration
        logger.info(
            "Running %d nodes for %.3f s (seed %d)", len(self.nodes), duration, self.setup.seed
        )
        self._seed_events()
        while True:
            t = self.queue.peek_time()
            if t is None or t >= duration:
                break
            self._dispatch(self.queue.pop())
        return self._finish()

    def _dispatch(self, event: Event):
        if logger.isEnabledFor(TRACE):
            logger.log(TRACE, "t=%.9f %s node=%s", event.t, event.kind.value, event.node)
        self._handlers[event.kind](event)

    def _seed_events(self):
        protocol = self.setup.protocol
        for index, window in enumerate(self.setup.world.interference_windows):
            self.queue.schedule(window.start, EventKind.INTERFERENCE_EDGE, data=(index, True))
            self.queue.schedule(window.end, EventKind.INTERFERENCE_EDGE, data=(index, False))

        if protocol.localization_cadence > 0:
            self.queue.schedule(0.0, EventKind.LOCALIZATION_TICK, data=0)
        self.queue.schedule(0.0, EventKind.METRICS_SAMPLE, data=0)

        for node_id in self.nodes:
            phase = float(self._stream(node_id, StreamPurpose.OGM_PHASE).uniform(0.0, protocol.ogm_interval))
            self.queue.schedule(phase, EventKind.OGM_EMIT, node_id, data=(phase, 0))
            if protocol.ranging_rate > 0:
                period = 1.0 / protocol.ranging_rate
                phase = float(self._stream(node_id, StreamPurpose.RANGING_PHASE).uniform(0.0, period))
                self.queue.schedule(phase, EventKind.RANGING_TICK, node_id, data=(phase, 0))

        for plan in self.setup.topics:
            if plan.topic.publish_rate <= 0:
                continue
            period = 1.0 / plan.topic.publish_rate
            for publisher in plan.publishers:
                phase = float(self._stream(publisher, StreamPurpose.PUBLISH_PHASE).uniform(0.0, period))
                self.queue.schedule(
                    phase, EventKind.PUBLISH_TICK, publisher,
                    data=(plan.topic.topic_id, phase, 0),
                )

    def _finish(self) -> MetricsReport:
        for node_id, node in self.nodes.items():
            drained = node.bus.drain_uwb_queues("never_ranged")
            if drained:
                logger.info("Node %d: %d UWB payloads never found a ranging session", node_id, drained)
        summary = self._summary()
        logger.info(
            "Run finished: %d events, localization RMSE %s",
            self.queue.processed, summary["localization"]["rmse_m"],
        )
        return MetricsReport(rows=list(self.metrics.rows), summary=summary)

    # -------------------------------------------------------------- helpers

    def _stream(self, node_id: NodeId, purpose: StreamPurpose):
        return self.streams.stream(node_id, purpose)

    def position(self, node_id: NodeId, t: float) -> Position:
        return position_at(self.nodes[node_id].config.trajectory, t)

    def _reschedule(self, event: Event, period: float):
        phase, k = event.data[-2], event.data[-1]
        head = tuple(event.data[:-2])
        self.queue.schedule(phase + (k + 1) * period, event.kind, event.node, data=head + (phase, k + 1))

    def _link_prob(self, a: Position, b: Position) -> float:
        world = self.setup.world
        active = sorted(self._active_windows)
        attenuation = max(world.attenuation_at(a, active), world.attenuation_at(b, active))
        return link_delivery_prob(self.setup.link, a.distance_to(b), attenuation)

    def _link_prob_between(self, a: NodeId, b: NodeId, now: float) -> float:
        return self._link_prob(self.position(a, now), self.position(b, now))

    def _route_lookup(self, at: NodeId, dest: NodeId, now: float) -> Optional[NodeId]:
        return self.nodes[at].mesh.routes.route_next_hop(dest, now)

    def _refresh_peers(self, node: NodeProcess, now: float):
        current = node.mesh.peers.discovered_peers(now)
        for peer in sorted(current - node.known_peers):
            logger.info("t=%.3f node %d discovered peer %d", now, node.id, peer)
        for peer in sorted(node.known_peers - current):
            logger.info("t=%.3f node %d lost peer %d", now, node.id, peer)
        node.known_peers = current

    def discovered_peers(self, node_id: NodeId) -> FrozenSet[NodeId]:
        return self.nodes[node_id].mesh.peers.discovered_peers(self.now)

    # ----------------------------------------------------------------- mesh

    def _on_interference_edge(self, event: Event):
        index, starting = event.data
        if starting:
            self._active_windows.add(index)
        else:
            self._active_windows.discard(index)
        logger.info(
            "t=%.3f interference window %d %s", event.t, index, "on" if starting else "off"
        )

    def _broadcast_ogm(self, sender: NodeId, ogm_bytes: bytes, announce_bytes: bytes, now: float):
        origin = self.position(sender, now)
        for receiver in self.nodes:
            if receiver == sender:
                continue
            p = self._link_prob(origin, self.position(receiver, now))
            if p <= 0.0:
                continue
            if p < 1.0 and self._stream(receiver, StreamPurpose.MESH_LINK).random() >= p:
                continue
            self.queue.schedule(
                now + self.setup.protocol.ogm_hop_latency, EventKind.OGM_ARRIVE, receiver,
                data=(sender, ogm_bytes, announce_bytes),
            )

    def _on_ogm_emit(self, event: Event):
        node = self.nodes[event.node]
        node.mesh.routes.purge(event.t)
        self._refresh_peers(node, event.t)
        ogm = node.mesh.originate()
        announce = encode_announce(node.bus.announcement())
        self._broadcast_ogm(node.id, encode_ogm(ogm), announce, event.t)
        self._reschedule(event, self.setup.protocol.ogm_interval)

    def _on_ogm_arrive(self, event: Event):
        sender, ogm_bytes, announce_bytes = event.data
        node = self.nodes[event.node]
        ogm = decode_ogm(ogm_bytes)
        if ogm.origin == node.id:
            return
        rebroadcast = node.mesh.receive(ogm, sender, event.t)
        node.bus.learn(decode_announce(announce_bytes), event.t)
        self._refresh_peers(node, event.t)
        if rebroadcast is not None:
            self._broadcast_ogm(node.id, encode_ogm(rebroadcast), announce_bytes, event.t)

    # -------------------------------------------------------------- ranging

    def _on_ranging_tick(self, event: Event):
        self._reschedule(event, 1.0 / self.setup.protocol.ranging_rate)
        node = self.nodes[event.node]
        if node.active_session is not None:
            session = self.sessions.get(node.active_session)
            if session is not None and not session.finished:
                return
        target = node.scheduler.select(sorted(node.mesh.peers.discovered_peers(event.t)))
        if target is not None:
            self._start_session(node.id, target, event.t)

    @staticmethod
    def _frame(frame_type: FrameType, src: NodeId, dst: NodeId, seqno: int,
               message: Optional[Message]) -> UwbFrame:
        if message is None:
            return UwbFrame(frame_type, src, dst, seqno)
        return UwbFrame(frame_type, src, dst, seqno, message.topic_id, message.payload)

    def _start_session(
        self,
        initiator: NodeId,
        responder: NodeId,
        now: float,
        poll_message: Optional[Message] = None,
        response_message: Optional[Message] = None,
    ) -> RangingSession:
        node = self.nodes[initiator]
        seqno = node.session_seqno
        node.session_seqno = (seqno + 1) & 0xFFFFFFFF
        key = (initiator, seqno)

        session = RangingSession(initiator, responder, seqno, now)
        self.sessions[key] = session
        node.active_session = key
        node.scheduler.mark_attempt(responder, now)
        self.metrics.record_attempt(initiator)
        if response_message is not None:
            self._response_overrides[key] = response_message

        distance = measure_range(
            self.setup.world, self.setup.channel,
            self.position(initiator, now), self.position(responder, now),
            self._stream(initiator, StreamPurpose.UWB_CHANNEL),
        )
        message = poll_message if poll_message is not None else node.bus.take_uwb_payload(responder)
        if message is not None:
            session.carried.append(message)
        frame = self._frame(FrameType.POLL, initiator, responder, seqno, message)
        session.advance(SessionState.POLL_SENT)
        self.queue.schedule(now + self.setup.protocol.session_timeout, EventKind.SESSION_TIMEOUT,
                            initiator, data=key)

        if distance is None:
            logger.debug("t=%.6f poll %d->%d lost (out of range)", now, initiator, responder)
            return session
        session.tof_ns = distance / SPEED_OF_LIGHT_M_PER_NS
        self.queue.schedule(
            now + session.tof_ns * 1e-9, EventKind.UWB_FRAME_ARRIVE, responder,
            data=(encode_frame(frame), message),
        )
        return session

    def _turnaround_ns(self, node_id: NodeId) -> float:
        protocol = self.setup.protocol
        jitter = float(self._stream(node_id, StreamPurpose.UWB_JITTER).uniform(
            -protocol.turnaround_jitter, protocol.turnaround_jitter
        ))
        return (protocol.turnaround + jitter) * 1e9

    def _on_uwb_frame_arrive(self, event: Event):
        frame_bytes, carried = event.data
        frame = decode_frame(frame_bytes)
        initiator = frame.dst if frame.frame_type is FrameType.RESPONSE else frame.src
        key = (initiator, frame.session_seqno)
        session = self.sessions.get(key)
        if session is None or session.finished:
            return

        if carried is not None:
            session.inbound[event.node] = dataclasses.replace(carried, payload=frame.payload)

        if frame.frame_type is FrameType.POLL:
            responder = self.nodes[session.responder]
            session.reply_b_ns = self._turnaround_ns(responder.id)
            message = self._response_overrides.pop(key, None)
            if message is None:
                message = responder.bus.take_uwb_payload(session.initiator)
            if message is not None:
                session.carried.append(message)
            reply = self._frame(FrameType.RESPONSE, responder.id, session.initiator, session.seqno, message)
            session.advance(SessionState.RESPONSE_SENT)
            self.queue.schedule(
                event.t + (session.reply_b_ns + session.tof_ns) * 1e-9,
                EventKind.UWB_FRAME_ARRIVE, session.initiator,
                data=(encode_frame(reply), message),
            )
        elif frame.frame_type is FrameType.RESPONSE:
            session.reply_a_ns = self._turnaround_ns(session.initiator)
            final = self._frame(FrameType.FINAL, session.initiator, session.responder, session.seqno, None)
            session.advance(SessionState.FINAL_SENT)
            self.queue.schedule(
                event.t + (session.reply_a_ns + session.tof_ns) * 1e-9,
                EventKind.UWB_FRAME_ARRIVE, session.responder,
                data=(encode_frame(final), None),
            )
        else:
            self._complete_session(session, event.t)

    def _complete_session(self, session: RangingSession, now: float):
        initiator = self.nodes[session.initiator]
        responder = self.nodes[session.responder]
        distance = session.complete(initiator.config.clock, responder.config.clock)

        def measurement(receiver: NodeId) -> RangeMeasurement:
            message = session.inbound.get(receiver)
            if message is None:
                return RangeMeasurement(session.initiator, session.responder, distance, now)
            return RangeMeasurement(
                session.initiator, session.responder, distance, now, message.topic_id, message.payload
            )

        pair = (measurement(initiator.id), measurement(responder.id))
        self.graph.add(pair[1])
        if self._awaited_session == (session.initiator, session.seqno):
            self._awaited_result = pair
        self.metrics.record_success(initiator.id, now - session.started_at)
        initiator.active_session = None

        for receiver in sorted(session.inbound):
            self.nodes[receiver].bus.deliver(session.inbound[receiver], Transport.UWB_EMBEDDED, now)

        logger.debug(
            "t=%.6f ranging %d->%d complete: %.4f m", now, initiator.id, responder.id, distance
        )

    def _on_session_timeout(self, event: Event):
        key = event.data
        session = self.sessions.pop(key, None)
        self._response_overrides.pop(key, None)
        if session is None:
            return
        node = self.nodes[session.initiator]
        if node.active_session == key:
            node.active_session = None
        if session.finished:
            return
        session.advance(SessionState.FAILED)
        for message in session.carried:
            self.metrics.ledger.copy_dropped(message.topic_id, "session_failed")
        logger.debug(
            "t=%.6f ranging %d->%d failed (%d payloads lost)",
            event.t, session.initiator, session.responder, len(session.carried),
        )

    def run_session(
        self,
        initiator: NodeId,
        responder: NodeId,
        poll_message: Optional[Message] = None,
        response_message: Optional[Message] = None,
    ) -> Optional[Tuple[RangeMeasurement, RangeMeasurement]]:
        """
        Run a single ranging exchange to completion or timeout.

        Intended for a simulator that has not been started; any events
        already queued are processed along the way.

        Returns:
            (initiator's measurement, responder's measurement), or None if
            the session failed
        """
        for message in (poll_message, response_message):
            if message is not None:
                self.metrics.ledger.copy_created(message.topic_id)
        self._awaited_session = (initiator, self.nodes[initiator].session_seqno)
        self._awaited_result = None
        session = self._start_session(initiator, responder, self.now, poll_message, response_message)
        while not session.finished:
            event = self.queue.pop()
            if event is None:
                break
            self._dispatch(event)
        result, self._awaited_result = self._awaited_result, None
        self._awaited_session = None
        return result

    # ----------------------------------------------------------- publishing

    def _on_publish_tick(self, event: Event):
        topic_id = event.data[0]
        topic = self.registry.by_id(topic_id)
        self._reschedule(event, 1.0 / topic.publish_rate)
        node = self.nodes[event.node]
        payload = self._stream(node.id, StreamPurpose.PAYLOAD).integers(
            0, 256, size=topic.payload_size, dtype="uint8"
        ).tobytes()
        outcome = node.bus.publish(topic.name, payload, event.t)
        for copy in outcome.mesh_copies:
            self._forward(node.id, copy.message, copy.destination, 0, event.t)

    def _forward(self, at: NodeId, message: Message, dest: NodeId, hops: int, now: float):
        if hops >= self.setup.protocol.ogm_ttl:
            self.metrics.ledger.copy_dropped(message.topic_id, "hop_limit")
            return
        outcome = self.forwarder.hop(at, dest, now, self._stream(at, StreamPurpose.MESH_DATA))
        if not outcome.delivered:
            self.metrics.ledger.copy_dropped(message.topic_id, outcome.reason)
            return
        self.queue.schedule(
            now + self.setup.protocol.data_hop_latency, EventKind.MESH_DATA_ARRIVE,
            outcome.next_hop, data=(message, dest, hops + 1),
        )

    def _on_mesh_data_arrive(self, event: Event):
        message, dest, hops = event.data
        if event.node == dest:
            self.nodes[dest].bus.deliver(message, Transport.MESH, event.t)
        else:
            self._forward(event.node, message, dest, hops, event.t)

    # --------------------------------------------------------- localization

    def _seed_estimates(self, now: float) -> Dict[NodeId, PositionEstimate]:
        world = self.setup.world
        return {
            node_id: PositionEstimate.seed(known_position(node.config, world, now), node.config.anchor_frame)
            for node_id, node in self.nodes.items()
            if node.config.is_anchor
        }

    def localize(self, now: float) -> Dict[NodeId, PositionEstimate]:
        """Recompute the full propagation fixpoint from the current range graph."""
        seeds = self._seed_estimates(now)
        altitudes: Dict[NodeId, float] = {}
        altimeter_sigma = 0.0
        for node_id, node in self.nodes.items():
            config = node.config
            if config.is_anchor or not config.has_altimeter:
                continue
            altimeter_sigma = max(altimeter_sigma, config.altimeter_sigma)
            noise = float(self._stream(node_id, StreamPurpose.ALTIMETER).standard_normal())
            altitude = self.position(node_id, now).z + config.altimeter_sigma * noise
            if config.anchor_frame is Frame.RELATIVE:
                altitude -= self.setup.world.relative_frame_origin.z
            altitudes[node_id] = altitude

        previous = self.estimates
        self.estimates = propagate_localization(
            self.graph, seeds, seeds.keys(), self.setup.solver, altitudes,
            math.hypot(self.setup.channel.sigma_los, altimeter_sigma),
        )
        for node_id, estimate in sorted(self.estimates.items()):
            was = previous.get(node_id)
            if estimate.localized and (was is None or not was.localized) and node_id not in seeds:
                logger.info(
                    "t=%.3f node %d localized (hop depth %d, %s frame, residual %.4f m)",
                    now, node_id, estimate.hop_depth, estimate.frame.value, estimate.residual,
                )
        return self.estimates

    def _on_localization_tick(self, event: Event):
        k = event.data
        self.queue.schedule(
            (k + 1) * self.setup.protocol.localization_cadence, EventKind.LOCALIZATION_TICK, data=k + 1
        )
        self.localize(event.t)

    def localization_error(self, node_id: NodeId, now: float) -> Optional[float]:
        estimate = self.estimates.get(node_id)
        if estimate is None or not estimate.localized:
            return None
        truth = self.position(node_id, now)
        if estimate.frame is Frame.RELATIVE:
            truth = truth - self.setup.world.relative_frame_origin
        return estimate.position.distance_to(truth)

    # -------------------------------------------------------------- metrics

    def _on_metrics_sample(self, event: Event):
        k = event.data
        self.queue.schedule((k + 1) / self.setup.protocol.metrics_rate, EventKind.METRICS_SAMPLE, data=k + 1)
        samples = []
        for node_id, node in self.nodes.items():
            error = self.localization_error(node_id, event.t)
            samples.append(NodeSample(
                node_id=node_id,
                error=error,
                localized=error is not None,
                routes=len(node.mesh.routes.live_routes(event.t)),
                is_seed=node.config.is_anchor,
            ))
        self.metrics.sample_metrics(event.t, samples)

    def _summary(self) -> Dict[str, object]:
        end = self.setup.duration
        seeds = [n for n, node in self.nodes.items() if node.config.is_anchor]
        errors = self.metrics.final_window_errors(end, exclude=seeds)
        per_node = {
            str(n): rmse(errors.get(n, []))
            for n in self.nodes if n not in seeds
        }
        overall = rmse(value for n in sorted(errors) for value in errors[n])

        final = {}
        for node_id in self.nodes:
            estimate = self.estimates.get(node_id)
            if estimate is None or not estimate.localized:
                final[str(node_id)] = {"localized": False}
                continue
            final[str(node_id)] = {
                "localized": True,
                "frame": estimate.frame.value,
                "hop_depth": estimate.hop_depth,
                "residual_m": estimate.residual,
                "position": list(estimate.position.as_tuple()),
            }

        topics = {}
        for topic in self.registry:
            counters = self.metrics.ledger.counters(topic.topic_id)
            topics[topic.name] = {
                "topic_id": topic.topic_id,
                "transport": topic.transport.value,
                **counters.as_dict(),
            }

        return {
            "schema_version": self.setup.schema_version,
            "seed": self.setup.seed,
            "duration_s": self.setup.duration,
            "events_processed": self.queue.processed,
            "localization": {
                "rmse_m": overall,
                "per_node_rmse_m": per_node,
                "final": final,
            },
            "ranging": self.metrics.ranging_summary(),
            "routing": {
                "table_sizes": {str(n): len(node.mesh.routes.live_routes(end)) for n, node in self.nodes.items()},
                "best_gateway": {str(n): node.mesh.best_gateway(end) for n, node in self.nodes.items()},
            },
            "topics": topics,
            "conservation_ok": self.metrics.ledger.conserved(),
        }


def run(setup: SimulationSetup) -> MetricsReport:
    """Run a scenario once."""
    return Simulator(setup).run()
