import itertools

import numpy as np
import pytest

from src.errors import FrameDecodeError, MalformedSessionError, OversizePayloadError
from src.swarm_model import Box, ClockModel, Position, World
from src.uwb_ranging import (
    SPEED_OF_LIGHT_M_PER_NS,
    FrameType,
    RangeMeasurement,
    RangingScheduler,
    RangingSession,
    RangingTimestamps,
    SessionState,
    UwbChannel,
    UwbFrame,
    decode_frame,
    ds_twr_tof,
    encode_frame,
    exchange_timestamps,
    measure_range,
    schedule_next,
    tof_to_distance,
)


def test_ds_twr_symmetric_example():
    assert ds_twr_tof(RangingTimestamps(ra=520, rb=520, da=500, db=500)) == pytest.approx(10.0)
    assert tof_to_distance(10.0) == pytest.approx(2.99792458)


def test_ds_twr_zero_distance():
    assert ds_twr_tof(RangingTimestamps(ra=500, rb=500, da=500, db=500)) == 0.0


def test_ds_twr_asymmetric_example():
    assert ds_twr_tof(RangingTimestamps(ra=1020, rb=520, da=500, db=1000)) == pytest.approx(10.0)


def test_ds_twr_rejects_non_positive_denominator():
    with pytest.raises(MalformedSessionError):
        ds_twr_tof(RangingTimestamps(0, 0, 0, 0))


def test_exchange_timestamps_ignore_clock_offsets():
    ts = exchange_timestamps(
        tof_ns=20.0, reply_a_ns=300_000.0, reply_b_ns=290_000.0,
        clock_a=ClockModel(offset=1e6), clock_b=ClockModel(offset=-3e5),
    )
    assert ds_twr_tof(ts) == pytest.approx(20.0, abs=1e-9)


@pytest.mark.parametrize("distance", [1.0, 10.0, 50.0])
def test_noiseless_session_is_exact(distance):
    session = RangingSession(initiator=1, responder=2, seqno=0, started_at=0.0)
    session.advance(SessionState.POLL_SENT)
    session.tof_ns = distance / SPEED_OF_LIGHT_M_PER_NS
    session.reply_b_ns = 300_000.0
    session.advance(SessionState.RESPONSE_SENT)
    session.reply_a_ns = 307_000.0
    session.advance(SessionState.FINAL_SENT)
    measured = session.complete(ClockModel(), ClockModel())
    assert session.state is SessionState.COMPLETE
    assert abs(measured - distance) <= 1e-9


def _drift_reference(distance, ea, eb):
    """Distance DS-TWR reports for ideal timestamps under drift only."""
    return distance * (1 + ea) * (1 + eb) / (1 + (ea + eb) / 2)


def test_drift_sweep():
    drifts = range(-50, 51, 10)
    turnarounds = (100_000.0, 500_000.0, 1_000_000.0)
    distances = (0.5, 5.0, 20.0, 40.0, 60.0)
    for drift_a, drift_b in itertools.product(drifts, drifts):
        clock_a, clock_b = ClockModel(0.0, drift_a), ClockModel(0.0, drift_b)
        ea, eb = drift_a * 1e-6, drift_b * 1e-6
        for reply_a, reply_b in itertools.product(turnarounds, turnarounds):
            for distance in distances:
                tof = distance / SPEED_OF_LIGHT_M_PER_NS
                ts = exchange_timestamps(tof, reply_a, reply_b, clock_a, clock_b)
                measured = tof_to_distance(ds_twr_tof(ts))
                # Turnaround asymmetry contributes nothing beyond round-off.
                assert measured == pytest.approx(_drift_reference(distance, ea, eb), abs=1e-6)
                error = abs(measured - distance)
                assert error <= distance * (abs(ea) + abs(eb)) / 2 + 1e-6
                if distance <= 20.0:
                    assert error <= 1e-3 + 1e-9


def test_frame_codec_round_trip_and_size():
    frame = UwbFrame(FrameType.POLL, src=3, dst=9, session_seqno=77, topic_id=4, payload=b"hello")
    data = encode_frame(frame)
    assert len(data) == 12 + 5
    assert decode_frame(data) == frame
    bare = UwbFrame(FrameType.FINAL, 9, 3, 77)
    assert decode_frame(encode_frame(bare)) == bare


def test_frame_codec_errors():
    with pytest.raises(OversizePayloadError):
        encode_frame(UwbFrame(FrameType.RESPONSE, 1, 2, 0, 1, bytes(65)))
    data = encode_frame(UwbFrame(FrameType.RESPONSE, 1, 2, 0, 1, b"abc"))
    with pytest.raises(FrameDecodeError):
        decode_frame(data[:5])
    with pytest.raises(FrameDecodeError):
        decode_frame(data[:-1])
    with pytest.raises(FrameDecodeError):
        decode_frame(b"\x20" + data[1:])


def test_frame_with_topic_and_empty_payload():
    frame = UwbFrame(FrameType.RESPONSE, 4, 2, 9, topic_id=3)
    data = encode_frame(frame)
    assert len(data) == 12
    decoded = decode_frame(data)
    assert decoded == frame
    assert decoded.topic_id == 3 and decoded.payload == b""


def test_full_payload_frame_is_76_bytes():
    frame = UwbFrame(FrameType.POLL, 1, 2, 0, topic_id=1, payload=bytes(range(64)))
    assert len(encode_frame(frame)) == 76


def test_frame_codec_randomized():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        length = int(rng.integers(0, 65))
        frame = UwbFrame(
            FrameType(int(rng.choice([0x10, 0x11, 0x12]))),
            src=int(rng.integers(0, 0x10000)),
            dst=int(rng.integers(0, 0x10000)),
            session_seqno=int(rng.integers(0, 2 ** 32)),
            topic_id=int(rng.integers(0, 0x10000)),
            payload=rng.integers(0, 256, size=length, dtype="uint8").tobytes(),
        )
        data = encode_frame(frame)
        assert len(data) == 12 + length
        assert decode_frame(data) == frame


def test_measure_range_out_of_range_and_noise_free():
    channel = UwbChannel(sigma_los=0.0, nlos_bias_mean=0.0, max_range=60.0)
    rng = np.random.default_rng(0)
    assert measure_range(World(), channel, Position(0, 0, 0), Position(61, 0, 0), rng) is None
    assert measure_range(World(), channel, Position(0, 0, 0), Position(3, 4, 0), rng) == 5.0


def test_measure_range_los_noise_statistics():
    channel = UwbChannel(sigma_los=0.1, nlos_bias_mean=0.5)
    rng = np.random.default_rng(11)
    samples = np.array([
        measure_range(World(), channel, Position(0, 0, 0), Position(10, 0, 0), rng)
        for _ in range(4000)
    ])
    assert samples.mean() == pytest.approx(10.0, abs=0.01)
    assert samples.std() == pytest.approx(0.1, rel=0.1)


def test_measure_range_nlos_adds_positive_bias():
    world = World(obstacles=(Box(Position(4, -1, -1), Position(6, 1, 1)),))
    channel = UwbChannel(sigma_los=0.0, nlos_bias_mean=0.5)
    rng = np.random.default_rng(5)
    samples = np.array([
        measure_range(world, channel, Position(0, 0, 0), Position(10, 0, 0), rng)
        for _ in range(4000)
    ])
    assert np.all(samples >= 10.0)
    assert samples.mean() == pytest.approx(10.5, abs=0.05)


def test_measure_range_clamps_at_zero():
    channel = UwbChannel(sigma_los=5.0, nlos_bias_mean=0.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        assert measure_range(World(), channel, Position(0, 0, 0), Position(0.01, 0, 0), rng) >= 0.0


def test_schedule_next_round_robin():
    assert schedule_next([2, 3, 4], {2: 1.0, 3: 0.5, 4: 0.8}) == 3
    assert schedule_next([2, 3], {2: 1.0}) == 3
    assert schedule_next([], {}) is None
    assert schedule_next([5, 4], {4: 1.0, 5: 1.0}) == 4


def test_ranging_scheduler_moves_on_after_attempts():
    scheduler = RangingScheduler()
    order = []
    for step in range(6):
        peer = scheduler.select([7, 3, 5])
        scheduler.mark_attempt(peer, float(step))
        order.append(peer)
    assert order == [3, 5, 7, 3, 5, 7]
    assert scheduler.session_counts == {3: 2, 5: 2, 7: 2}


def test_session_rejects_illegal_transitions():
    session = RangingSession(1, 2, 0, 0.0)
    with pytest.raises(MalformedSessionError):
        session.advance(SessionState.FINAL_SENT)
    session.advance(SessionState.POLL_SENT)
    session.advance(SessionState.FAILED)
    assert session.finished
    with pytest.raises(MalformedSessionError):
        session.advance(SessionState.RESPONSE_SENT)


def test_range_measurement_validation():
    with pytest.raises(ValueError):
        RangeMeasurement(1, 2, -0.1, 0.0)
    with pytest.raises(ValueError):
        RangeMeasurement(1, 2, 1.0, 0.0, topic_id=1, payload=bytes(65))
