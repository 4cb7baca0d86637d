"""Packet formats and the loopback UDP control loop."""

import socket
import struct
import threading
import time

import numpy as np
import pytest

from hydronmpc.errors import ConfigError, FormatError, ProtocolError
from hydronmpc.plant import PlantParams
from hydronmpc.udp import (
    COMMAND_SIZE,
    STATE_SIZE,
    LinkStats,
    PacketCommand,
    PacketState,
    decode_command,
    decode_state,
    drop_schedule,
    encode_command,
    encode_state,
    udp_drive,
    udp_serve,
)


# ---------------------------------------------------------------------------
# packet encode / decode
# ---------------------------------------------------------------------------

def test_packet_sizes():
    state = encode_state(PacketState(seq=1, t=0.0, state=np.zeros(9)))
    cmd = encode_command(PacketCommand(seq=1, valves=np.zeros(3),
                                       gear_index=0))
    assert len(state) == STATE_SIZE == 86
    assert len(cmd) == COMMAND_SIZE == 33


def test_state_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pkt = PacketState(seq=int(rng.integers(0, 2**32)),
                          t=float(rng.uniform(0, 1e6)),
                          state=rng.normal(size=9) * 10.0**rng.integers(-8, 8))
        buf = encode_state(pkt)
        back = decode_state(buf)
        assert back.seq == pkt.seq and back.t == pkt.t
        np.testing.assert_array_equal(back.state, pkt.state)
        assert encode_state(back) == buf  # bit-exact


def test_state_round_trip_extremes():
    extremes = np.array([np.inf, -np.inf, np.nan, 0.0, -0.0,
                         np.finfo(np.float64).max, np.finfo(np.float64).tiny,
                         5e-324, -1.0])
    buf = encode_state(PacketState(seq=2**32 - 1, t=-np.inf, state=extremes))
    assert encode_state(decode_state(buf)) == buf


def test_command_round_trip():
    pkt = PacketCommand(seq=7, valves=np.array([0.25, -1.0, np.nan]),
                        gear_index=255)
    buf = encode_command(pkt)
    back = decode_command(buf)
    assert back.seq == 7 and back.gear_index == 255
    assert encode_command(back) == buf


def test_encode_rejects_out_of_range():
    with pytest.raises(FormatError):
        encode_state(PacketState(seq=2**32, t=0.0, state=np.zeros(9)))
    with pytest.raises(FormatError):
        encode_state(PacketState(seq=-1, t=0.0, state=np.zeros(9)))
    with pytest.raises(FormatError):
        encode_state(PacketState(seq=0, t=0.0, state=np.zeros(8)))
    with pytest.raises(FormatError):
        encode_command(PacketCommand(seq=0, valves=np.zeros(3),
                                     gear_index=256))


def test_decode_rejects_bad_magic_and_size():
    good = encode_state(PacketState(seq=1, t=0.0, state=np.zeros(9)))
    with pytest.raises(FormatError):
        decode_state(b"XX" + good[2:])
    with pytest.raises(FormatError):
        decode_state(good[:-1])
    good_cmd = encode_command(PacketCommand(seq=1, valves=np.zeros(3),
                                            gear_index=0))
    with pytest.raises(FormatError):
        decode_command(b"ZZ" + good_cmd[2:])
    with pytest.raises(FormatError):
        decode_command(good_cmd + b"\x00")


def test_drop_schedule_deterministic():
    a = drop_schedule(500, 0.1, seed=3)
    b = drop_schedule(500, 0.1, seed=3)
    np.testing.assert_array_equal(a, b)
    assert not drop_schedule(100, 0.0, seed=3).any()
    assert 20 < a.sum() < 90  # roughly 10%
    with pytest.raises(ConfigError):
        drop_schedule(10, 1.0, seed=0)


# ---------------------------------------------------------------------------
# loopback loop
# ---------------------------------------------------------------------------

def _script_valves(seq):
    return np.array([0.001 * seq, -0.0005 * seq, 0.3])


def _script_handler(state, t):
    seq = int(round(t / 0.02)) + 1
    return _script_valves(seq), 2


def _start_server(handler, max_cycles):
    box = {}
    ready = threading.Event()

    def on_bound(addr):
        box["addr"] = addr
        ready.set()

    def run():
        box["stats"] = udp_serve(handler, ("127.0.0.1", 0),
                                 max_cycles=max_cycles, on_bound=on_bound)

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    assert ready.wait(5.0), "server never bound"
    return box, thread


def test_lossless_loopback():
    box, thread = _start_server(_script_handler, max_cycles=120)
    records, stats = udp_drive(PlantParams(), box["addr"], cycles=120)
    thread.join(5.0)
    assert [r.seq for r in records] == list(range(1, 121))
    assert all(r.received and not r.timeout and not r.failsafe
               for r in records)
    for r in records:
        np.testing.assert_array_equal(r.applied[:3], _script_valves(r.seq))
        assert r.applied[3] == 160.0  # gear index 2
    assert stats.sent == stats.received == 120
    assert stats.timeouts == stats.malformed == stats.stale == 0
    srv = box["stats"]
    assert srv.received == srv.sent == 120
    assert srv.malformed == srv.stale == 0


def test_injected_drops_hold_last_command():
    cycles, rate, seed = 500, 0.1, 3
    schedule = drop_schedule(cycles, rate, seed)
    box, thread = _start_server(_script_handler, max_cycles=cycles)
    records, stats = udp_drive(PlantParams(), box["addr"], cycles=cycles,
                               drop_rate=rate, drop_seed=seed)
    thread.join(5.0)
    assert len(records) == cycles
    initial = np.array([0.0, 0.0, 0.0, 120.0])  # medium gear, zero valves
    for k, rec in enumerate(records):
        assert rec.injected_drop == bool(schedule[k])
        expected = (initial if k == 0 else records[k - 1].applied) \
            if schedule[k] else np.concatenate([_script_valves(k + 1),
                                                [160.0]])
        np.testing.assert_array_equal(rec.applied, expected)
    assert stats.received == cycles - int(schedule.sum())
    assert not any(r.failsafe for r in records)


def test_silence_triggers_failsafe_then_recovers():
    cycles = 130
    silence = (60, 115)  # ticks with replies discarded
    box, thread = _start_server(_script_handler, max_cycles=cycles)
    records, stats = udp_drive(PlantParams(), box["addr"], cycles=cycles,
                               silence=silence, failsafe_after=1.0)
    thread.join(5.0)
    # last good command at tick 59 (t = 1.18 s); failsafe once t > 2.18 s
    for k, rec in enumerate(records):
        if 60 <= k < 110:
            assert not rec.failsafe and not rec.received
            np.testing.assert_array_equal(rec.applied[:3], _script_valves(60))
        elif 110 <= k < 115:
            assert rec.failsafe
            np.testing.assert_array_equal(rec.applied[:3], np.zeros(3))
            assert rec.applied[3] == 160.0  # gear is preserved
        else:
            assert rec.received and not rec.failsafe
            np.testing.assert_array_equal(rec.applied[:3],
                                          _script_valves(k + 1))
    assert stats.failsafe_ticks == 5


def test_server_counts_malformed_and_stale():
    box, thread = _start_server(_script_handler, max_cycles=2)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(2.0)
    addr = box["addr"]
    sock.sendto(b"garbage", addr)                       # wrong size
    good = encode_state(PacketState(seq=1, t=0.0, state=np.zeros(9)))
    sock.sendto(b"XX" + good[2:], addr)                 # wrong magic
    sock.sendto(good, addr)                             # valid seq 1
    decode_command(sock.recvfrom(256)[0])
    sock.sendto(good, addr)                             # duplicate -> stale
    sock.sendto(encode_state(PacketState(seq=2, t=0.02, state=np.zeros(9))),
                addr)
    decode_command(sock.recvfrom(256)[0])
    sock.close()
    thread.join(5.0)
    srv = box["stats"]
    assert srv.malformed == 2
    assert srv.stale == 1
    assert srv.sent == 2


def test_command_seq_echoes_state_seq():
    box, thread = _start_server(_script_handler, max_cycles=1)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(2.0)
    sock.sendto(encode_state(PacketState(seq=42, t=0.82, state=np.zeros(9))),
                box["addr"])
    reply = decode_command(sock.recvfrom(256)[0])
    sock.close()
    thread.join(5.0)
    assert reply.seq == 42


def test_bind_failure_raises():
    holder = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    holder.bind(("127.0.0.1", 0))
    addr = holder.getsockname()
    with pytest.raises(ProtocolError):
        udp_serve(_script_handler, addr, max_cycles=1)
    holder.close()


def test_timeouts_without_server():
    # a bound socket that never answers
    mute = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    mute.bind(("127.0.0.1", 0))
    records, stats = udp_drive(PlantParams(), mute.getsockname(), cycles=3,
                               reply_timeout=0.05)
    mute.close()
    assert stats.timeouts == 3
    assert all(r.timeout and not r.received for r in records)
    for rec in records:
        np.testing.assert_array_equal(rec.applied[:3], np.zeros(3))
