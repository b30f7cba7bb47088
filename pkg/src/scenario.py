"""
Scenario files: strict schema, semantic validation and conversion into a
runnable SimulationSetup.

Precedence for every setting is CLI flag > scenario file > default.
"""

import json
import logging
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .comms_bus import MAX_TOPIC_NAME, Topic, Transport
from .errors import ScenarioIssue, ScenarioValidationError
from .mesh_net import LinkModel
from .relative_loc import SolverConfig, SolverMode
from .simulator import ProtocolConfig, SimulationSetup, TopicPlan
from .swarm_model import (
    MAX_DRIFT_PPM,
    Box,
    ClockModel,
    Frame,
    InterferenceWindow,
    NodeConfig,
    Position,
    Trajectory,
    World,
)
from .uwb_ranging import MAX_PAYLOAD, UwbChannel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

Vector3 = Tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class BoxSpec(_Strict):
    lo: Vector3
    hi: Vector3


class InterferenceSpec(_Strict):
    start: float = Field(ge=0)
    end: float = Field(ge=0)
    lo: Vector3
    hi: Vector3
    attenuation: float = Field(ge=0, le=1)


class WorldSpec(_Strict):
    obstacles: List[BoxSpec] = []
    interference_windows: List[InterferenceSpec] = []
    relative_frame_origin: Vector3 = (0.0, 0.0, 0.0)


class LinkSpec(_Strict):
    reference_range: float = Field(50.0, gt=0)
    falloff_width: float = Field(5.0, gt=0)
    shape: Literal["logistic", "disk"] = "logistic"


class UwbSpec(_Strict):
    sigma_los: float = Field(0.10, ge=0)
    nlos_bias_mean: float = Field(0.5, ge=0)
    max_range: float = Field(60.0, gt=0)


class ChannelSpec(_Strict):
    link: LinkSpec = LinkSpec()
    uwb: UwbSpec = UwbSpec()


class ProtocolSpec(_Strict):
    ogm_interval: float = Field(1.0, gt=0)
    ogm_ttl: int = Field(16, ge=1, le=255)
    seqno_window: int = Field(64, ge=1)
    route_expiry: float = Field(10.0, gt=0)
    peer_expiry: float = Field(10.0, gt=0)
    ogm_hop_latency: float = Field(1e-3, ge=0)
    data_hop_latency: float = Field(2e-3, ge=0)
    ranging_rate: float = Field(10.0, ge=0)
    turnaround: float = Field(300e-6, gt=0)
    turnaround_jitter: float = Field(10e-6, ge=0)
    session_timeout: float = Field(5e-3, gt=0)
    localization_cadence: float = Field(1.0, ge=0)
    metrics_rate: float = Field(10.0, gt=0)
    uwb_queue_depth: int = Field(8, ge=1)


class SolverSpec(_Strict):
    mode: Literal["planar2d", "full3d"] = "planar2d"
    max_iters: int = Field(50, ge=1)
    step_tolerance: float = Field(1e-6, gt=0)
    damping: float = Field(1e-3, gt=0)
    smoothing_window: int = Field(5, ge=1)


class WaypointSpec(_Strict):
    t: float = Field(ge=0)
    position: Vector3


class ClockSpec(_Strict):
    offset_ns: float = 0.0
    drift_ppm: float = Field(0.0, ge=-MAX_DRIFT_PPM, le=MAX_DRIFT_PPM)


class NodeSpec(_Strict):
    id: int = Field(ge=0, le=0xFFFF)
    waypoints: List[WaypointSpec] = Field(min_length=1)
    clock: ClockSpec = ClockSpec()
    is_gateway: bool = False
    is_anchor: bool = False
    anchor_frame: Literal["global", "relative"] = "global"
    has_altimeter: bool = False
    altimeter_sigma: float = Field(0.0, ge=0)


class TopicSpec(_Strict):
    name: str = Field(min_length=1)
    rate_limit: float = Field(0.0, ge=0)
    burst: int = Field(1, ge=1)
    transport: Literal["mesh", "uwb_embedded", "auto"] = "auto"
    max_payload: int = Field(MAX_PAYLOAD, ge=0)
    publish_rate: float = Field(1.0, ge=0)
    payload_size: int = Field(16, ge=0)
    publishers: List[int] = []
    subscribers: List[int] = []


class ScenarioFile(_Strict):
    schema_version: Literal[1]
    description: Optional[str] = None
    duration: float = Field(ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    world: WorldSpec = WorldSpec()
    channel: ChannelSpec = ChannelSpec()
    protocol: ProtocolSpec = ProtocolSpec()
    solver: SolverSpec = SolverSpec()
    nodes: List[NodeSpec] = Field(min_length=1)
    topics: List[TopicSpec] = []


def _location(loc: Tuple) -> str:
    parts: List[str] = []
    for item in loc:
        if isinstance(item, int):
            parts.append(f"[{item}]")
        else:
            parts.append(f".{item}" if parts else str(item))
    return "".join(parts)


def _entries(value) -> List[Tuple[int, dict]]:
    if not isinstance(value, list):
        return []
    return [(index, item) for index, item in enumerate(value) if isinstance(item, dict)]


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_vector(value) -> bool:
    return isinstance(value, (list, tuple)) and len(value) == 3 and all(_is_number(v) for v in value)


def _section(data: dict, key: str) -> dict:
    value = data.get(key)
    return value if isinstance(value, dict) else {}


def _semantic_issues(data: dict) -> List[ScenarioIssue]:
    """Cross-field checks over scenario data.

    Works on raw parsed JSON as well as on a validated scenario's dump, so
    it can run next to a failed schema pass. Fields with the wrong shape are
    skipped; the schema pass reports those.
    """
    issues: List[ScenarioIssue] = []
    nodes = _entries(data.get("nodes"))
    seen: Dict[int, int] = {}
    for index, node in nodes:
        where = f"nodes[{index}]"
        node_id = node.get("id")
        if isinstance(node_id, int) and not isinstance(node_id, bool):
            if node_id in seen:
                issues.append(ScenarioIssue(f"{where}.id", f"duplicate node id {node_id}"))
            seen.setdefault(node_id, index)
        times = [waypoint.get("t") for _, waypoint in _entries(node.get("waypoints"))]
        if all(_is_number(t) for t in times) and any(b <= a for a, b in zip(times, times[1:])):
            issues.append(ScenarioIssue(f"{where}.waypoints", "waypoint times must be strictly increasing"))

    gateways = [node.get("id") for _, node in nodes if node.get("is_gateway") is True]
    if len(gateways) > 1:
        ids = sorted(g for g in gateways if _is_number(g))
        issues.append(ScenarioIssue(
            "nodes", f"at most one gateway is allowed, found {len(gateways)}: {ids}"
        ))

    world = _section(data, "world")
    for index, box in _entries(world.get("obstacles")):
        lo, hi = box.get("lo"), box.get("hi")
        if _is_vector(lo) and _is_vector(hi) and any(h < l for l, h in zip(lo, hi)):
            issues.append(ScenarioIssue(f"world.obstacles[{index}]", "box has negative extent"))
    for index, window in _entries(world.get("interference_windows")):
        where = f"world.interference_windows[{index}]"
        start, end = window.get("start"), window.get("end")
        if _is_number(start) and _is_number(end) and end < start:
            issues.append(ScenarioIssue(where, "window ends before it starts"))
        lo, hi = window.get("lo"), window.get("hi")
        if _is_vector(lo) and _is_vector(hi) and any(h < l for l, h in zip(lo, hi)):
            issues.append(ScenarioIssue(where, "region has negative extent"))

    protocol = _section(data, "protocol")
    defaults = ProtocolSpec()
    turnaround = protocol.get("turnaround", defaults.turnaround)
    jitter = protocol.get("turnaround_jitter", defaults.turnaround_jitter)
    if _is_number(turnaround) and _is_number(jitter) and jitter >= turnaround:
        issues.append(ScenarioIssue(
            "protocol.turnaround_jitter",
            f"jitter {jitter} s must be smaller than the turnaround {turnaround} s",
        ))

    names: Dict[str, int] = {}
    for index, topic in _entries(data.get("topics")):
        where = f"topics[{index}]"
        name = topic.get("name")
        if isinstance(name, str):
            if name in names:
                issues.append(ScenarioIssue(f"{where}.name", f"duplicate topic name '{name}'"))
            names.setdefault(name, index)
            if len(name.encode("utf-8")) > MAX_TOPIC_NAME:
                issues.append(ScenarioIssue(f"{where}.name", f"topic name longer than {MAX_TOPIC_NAME} bytes"))
        max_payload = topic.get("max_payload", MAX_PAYLOAD)
        if topic.get("transport") == "uwb_embedded" and _is_number(max_payload) and max_payload > MAX_PAYLOAD:
            issues.append(ScenarioIssue(
                f"{where}.max_payload", f"uwb_embedded topics carry at most {MAX_PAYLOAD} bytes"
            ))
        for role in ("publishers", "subscribers"):
            refs = topic.get(role, [])
            if not isinstance(refs, list):
                continue
            for ref_index, ref in enumerate(refs):
                if isinstance(ref, int) and not isinstance(ref, bool) and ref not in seen:
                    issues.append(ScenarioIssue(
                        f"{where}.{role}[{ref_index}]", f"dangling reference to unknown node {ref}"
                    ))
    return issues


def validate_scenario(data: bytes) -> ScenarioFile:
    """
    Parse and validate a scenario file.

    Schema and cross-field checks both run, so a file with an unknown key
    and a duplicate id reports both.

    Args:
        data: Raw file contents (UTF-8 JSON)

    Returns:
        The validated scenario

    Raises:
        ScenarioValidationError: with every issue found
    """
    try:
        raw = json.loads(data)
    except UnicodeDecodeError as e:
        raise ScenarioValidationError([ScenarioIssue("", f"file is not UTF-8: {e}")]) from None
    except json.JSONDecodeError as e:
        raise ScenarioValidationError(
            [ScenarioIssue(f"line {e.lineno}, column {e.colno}", f"parse error: {e.msg}")]
        ) from None

    try:
        scenario = ScenarioFile.model_validate(raw)
    except ValidationError as e:
        issues = [ScenarioIssue(_location(err["loc"]), err["msg"]) for err in e.errors()]
        if isinstance(raw, dict):
            issues.extend(_semantic_issues(raw))
        raise ScenarioValidationError(issues) from None

    issues = _semantic_issues(scenario.model_dump())
    if issues:
        raise ScenarioValidationError(issues)
    return scenario


def scenario_warnings(scenario: ScenarioFile) -> List[str]:
    """Problems that do not stop a run but make some metrics meaningless."""
    warnings: List[str] = []
    required = 3 if scenario.solver.mode == "planar2d" else 4
    anchors = sum(1 for node in scenario.nodes if node.is_anchor)
    if anchors < required:
        warnings.append(
            f"only {anchors} anchor(s) for {scenario.solver.mode} localization "
            f"(needs {required}); localization metrics will stay empty"
        )
    for topic in scenario.topics:
        if topic.payload_size > topic.max_payload:
            warnings.append(
                f"topic '{topic.name}' publishes {topic.payload_size} bytes but allows "
                f"{topic.max_payload}; every publish will be refused"
            )
        if topic.publishers and not topic.subscribers:
            warnings.append(f"topic '{topic.name}' has publishers but no subscribers")
    return warnings


def apply_overrides(
    scenario: ScenarioFile,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
) -> ScenarioFile:
    """Command-line values replace the file's seed and duration."""
    update = {}
    if seed is not None:
        update["seed"] = seed
    if duration is not None:
        update["duration"] = duration
    if not update:
        return scenario
    # Re-validate so overrides obey the same bounds as file values.
    try:
        return ScenarioFile.model_validate({**scenario.model_dump(), **update})
    except ValidationError as e:
        raise ScenarioValidationError(
            ScenarioIssue(_location(err["loc"]), err["msg"]) for err in e.errors()
        ) from None


def _position(values: Vector3) -> Position:
    return Position.from_sequence(values)


def build_setup(scenario: ScenarioFile) -> SimulationSetup:
    """Turn a validated scenario into the runtime setup; topic ids are assigned from 1."""
    world = World(
        obstacles=tuple(Box(_position(b.lo), _position(b.hi)) for b in scenario.world.obstacles),
        interference_windows=tuple(
            InterferenceWindow(w.start, w.end, Box(_position(w.lo), _position(w.hi)), w.attenuation)
            for w in scenario.world.interference_windows
        ),
        relative_frame_origin=_position(scenario.world.relative_frame_origin),
    )

    nodes = tuple(
        NodeConfig(
            id=node.id,
            trajectory=Trajectory(tuple((w.t, _position(w.position)) for w in node.waypoints)),
            clock=ClockModel(node.clock.offset_ns, node.clock.drift_ppm),
            is_gateway=node.is_gateway,
            is_anchor=node.is_anchor,
            anchor_frame=Frame(node.anchor_frame),
            has_altimeter=node.has_altimeter,
            altimeter_sigma=node.altimeter_sigma,
        )
        for node in scenario.nodes
    )

    topics = tuple(
        TopicPlan(
            topic=Topic(
                name=spec.name,
                topic_id=index,
                rate_limit=spec.rate_limit,
                burst=spec.burst,
                transport=Transport(spec.transport),
                max_payload=spec.max_payload,
                publish_rate=spec.publish_rate,
                payload_size=spec.payload_size,
            ),
            publishers=tuple(spec.publishers),
            subscribers=tuple(spec.subscribers),
        )
        for index, spec in enumerate(scenario.topics, start=1)
    )

    solver = scenario.solver
    return SimulationSetup(
        nodes=nodes,
        world=world,
        link=LinkModel(**scenario.channel.link.model_dump()),
        channel=UwbChannel(**scenario.channel.uwb.model_dump()),
        protocol=ProtocolConfig(**scenario.protocol.model_dump()),
        solver=SolverConfig(
            max_iters=solver.max_iters,
            step_tolerance=solver.step_tolerance,
            damping=solver.damping,
            mode=SolverMode(solver.mode),
            smoothing_window=solver.smoothing_window,
        ),
        topics=topics,
        duration=scenario.duration,
        seed=scenario.seed,
        schema_version=scenario.schema_version,
    )


def load_scenario(path: str) -> ScenarioFile:
    with open(path, "rb") as f:
        scenario = validate_scenario(f.read())
    logger.info("Loaded scenario %s (%d nodes, %d topics)", path, len(scenario.nodes), len(scenario.topics))
    return scenario


def _stationary(node_id: int, position: Vector3, **extra) -> Dict:
    return {"id": node_id, "waypoints": [{"t": 0.0, "position": list(position)}], **extra}


def example_scenario() -> str:
    """A documented sample scenario; always passes validate_scenario."""
    scenario = {
        "schema_version": SCHEMA_VERSION,
        "description": (
            "Five MAVs at 2 m altitude. Nodes 1-3 are anchors (node 1 is also the "
            "gateway); node 4 localizes from the anchors, node 5 needs node 4. "
            "Node 5 flies a short leg so the ranging graph changes over time. "
            "Units: meters, seconds, ns for clock offsets, ppm for drift. "
            "Topic 'status' rides inside UWB ranging frames, 'telemetry' goes "
            "over the Wi-Fi mesh. Delete any section to fall back to defaults."
        ),
        "duration": 30.0,
        "seed": 1,
        "world": {
            "obstacles": [{"lo": [20.0, -2.0, 0.0], "hi": [22.0, 2.0, 5.0]}],
            "interference_windows": [
                {"start": 10.0, "end": 15.0, "lo": [-5.0, -5.0, 0.0], "hi": [15.0, 15.0, 5.0],
                 "attenuation": 0.3}
            ],
            "relative_frame_origin": [0.0, 0.0, 0.0],
        },
        "channel": {
            "link": {"reference_range": 50.0, "falloff_width": 5.0, "shape": "logistic"},
            "uwb": {"sigma_los": 0.1, "nlos_bias_mean": 0.5, "max_range": 60.0},
        },
        "protocol": ProtocolSpec().model_dump(),
        "solver": SolverSpec().model_dump(),
        "nodes": [
            _stationary(1, (0.0, 0.0, 2.0), is_gateway=True, is_anchor=True),
            _stationary(2, (10.0, 0.0, 2.0), is_anchor=True),
            _stationary(3, (0.0, 10.0, 2.0), is_anchor=True),
            _stationary(4, (3.0, 4.0, 2.0), has_altimeter=True, altimeter_sigma=0.05,
                        clock={"offset_ns": 1200.0, "drift_ppm": 20.0}),
            {
                "id": 5,
                "waypoints": [
                    {"t": 0.0, "position": [6.0, 6.0, 2.0]},
                    {"t": 20.0, "position": [8.0, 7.0, 2.0]},
                ],
                "clock": {"offset_ns": -800.0, "drift_ppm": -35.0},
                "has_altimeter": True,
                "altimeter_sigma": 0.05,
            },
        ],
        "topics": [
            {"name": "status", "rate_limit": 5.0, "burst": 2, "transport": "uwb_embedded",
             "max_payload": 32, "publish_rate": 2.0, "payload_size": 8,
             "publishers": [4], "subscribers": [1, 5]},
            {"name": "telemetry", "rate_limit": 0.0, "burst": 1, "transport": "mesh",
             "max_payload": 512, "publish_rate": 1.0, "payload_size": 256,
             "publishers": [5], "subscribers": [1]},
        ],
    }
    return json.dumps(scenario, indent=2) + "\n"
