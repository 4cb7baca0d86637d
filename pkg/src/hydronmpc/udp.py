"""50 Hz UDP control loop: packet formats, controller server, plant driver.

The plant side (`udp_drive`) sends one state packet per control tick and
waits for the matching command reply; the controller side (`udp_serve`)
answers every valid state packet.  Both sides drop stale or malformed
datagrams.  The plant holds the last valid command across lost replies and
zeroes the valves once it has gone more than `failsafe_after` seconds
without one.

Packet layouts (little-endian, fixed size):

    state   "ST" | u32 sequence | f64 timestamp | 9 x f64 state     (86 B)
    command "CM" | u32 sequence | 3 x f64 valves | u8 gear | 2 pad  (33 B)

Loss experiments are driven by a seeded drop schedule applied on the plant
side (replies are received, then discarded), so runs stay deterministic
and auditable tick by tick.
"""

from __future__ import annotations

import socket
import struct
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import DT, N_JOINT, N_STATE
from .errors import ConfigError, FormatError, ProtocolError
from .plant import PlantParams, initial_state, plant_step

STATE_FMT = "<2sId9d"
COMMAND_FMT = "<2sI3dBxx"
STATE_SIZE = struct.calcsize(STATE_FMT)       # 86 bytes
COMMAND_SIZE = struct.calcsize(COMMAND_FMT)   # 33 bytes
STATE_MAGIC = b"ST"
COMMAND_MAGIC = b"CM"

_SEQ_MAX = 2**32 - 1


@dataclass(frozen=True)
class PacketState:
    seq: int
    t: float
    state: np.ndarray  # (9,)


@dataclass(frozen=True)
class PacketCommand:
    seq: int
    valves: np.ndarray  # (3,)
    gear_index: int


@dataclass
class LinkStats:
    received: int = 0
    sent: int = 0
    malformed: int = 0
    stale: int = 0
    timeouts: int = 0
    failsafe_ticks: int = 0


def encode_state(pkt: PacketState) -> bytes:
    if not 0 <= pkt.seq <= _SEQ_MAX:
        raise FormatError(f"sequence {pkt.seq} out of u32 range")
    state = np.asarray(pkt.state, dtype=np.float64)
    if state.shape != (N_STATE,):
        raise FormatError(f"state must have {N_STATE} entries")
    return struct.pack(STATE_FMT, STATE_MAGIC, pkt.seq, pkt.t, *state)


def decode_state(buf: bytes) -> PacketState:
    if len(buf) != STATE_SIZE:
        raise FormatError(f"state packet must be {STATE_SIZE} bytes, "
                          f"got {len(buf)}")
    magic, seq, t, *values = struct.unpack(STATE_FMT, buf)
    if magic != STATE_MAGIC:
        raise FormatError(f"bad state magic {magic!r}")
    return PacketState(seq=seq, t=t, state=np.array(values))


def encode_command(pkt: PacketCommand) -> bytes:
    if not 0 <= pkt.seq <= _SEQ_MAX:
        raise FormatError(f"sequence {pkt.seq} out of u32 range")
    if not 0 <= pkt.gear_index <= 255:
        raise FormatError(f"gear index {pkt.gear_index} out of u8 range")
    valves = np.asarray(pkt.valves, dtype=np.float64)
    if valves.shape != (N_JOINT,):
        raise FormatError(f"command must carry {N_JOINT} valves")
    return struct.pack(COMMAND_FMT, COMMAND_MAGIC, pkt.seq, *valves,
                       pkt.gear_index)


def decode_command(buf: bytes) -> PacketCommand:
    if len(buf) != COMMAND_SIZE:
        raise FormatError(f"command packet must be {COMMAND_SIZE} bytes, "
                          f"got {len(buf)}")
    magic, seq, v0, v1, v2, gear_index = struct.unpack(COMMAND_FMT, buf)
    if magic != COMMAND_MAGIC:
        raise FormatError(f"bad command magic {magic!r}")
    return PacketCommand(seq=seq, valves=np.array([v0, v1, v2]),
                         gear_index=gear_index)


def drop_schedule(cycles: int, rate: float, seed: int) -> np.ndarray:
    """Boolean mask of ticks whose command reply is discarded."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("drop rate must be in [0, 1)")
    if rate == 0.0:
        return np.zeros(cycles, dtype=bool)
    return np.random.default_rng(seed).random(cycles) < rate


# ---------------------------------------------------------------------------
# controller side
# ---------------------------------------------------------------------------

def udp_serve(handler: Callable, bind=("127.0.0.1", 0), *,
              max_cycles: int = None, stop=None, poll: float = 0.05,
              on_bound: Callable = None) -> LinkStats:
    """Answer state packets with command packets until stopped.

    `handler(state, t) -> (valves, gear_index)` computes the reply for one
    tick.  Replies echo the state packet's sequence number, so a lossless
    exchange yields gapless, strictly increasing command sequences.  Runs
    until `max_cycles` replies were sent or `stop` (a threading.Event) is
    set; `on_bound` receives the bound address, useful with port 0.
    """
    stats = LinkStats()
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind(tuple(bind))
    except OSError as exc:
        sock.close()
        raise ProtocolError(f"cannot bind {bind}: {exc}") from exc
    sock.settimeout(poll)
    if on_bound is not None:
        on_bound(sock.getsockname())
    last_seq = 0
    try:
        while True:
            if stop is not None and stop.is_set():
                break
            try:
                buf, peer = sock.recvfrom(4 * STATE_SIZE)
            except socket.timeout:
                continue
            try:
                pkt = decode_state(buf)
            except FormatError:
                stats.malformed += 1
                continue
            if pkt.seq <= last_seq:
                stats.stale += 1
                continue
            last_seq = pkt.seq
            stats.received += 1
            valves, gear_index = handler(pkt.state, pkt.t)
            reply = PacketCommand(seq=pkt.seq,
                                  valves=np.asarray(valves, dtype=np.float64),
                                  gear_index=int(gear_index))
            sock.sendto(encode_command(reply), peer)
            stats.sent += 1
            if max_cycles is not None and stats.sent >= max_cycles:
                break
    finally:
        sock.close()
    return stats


# ---------------------------------------------------------------------------
# plant side
# ---------------------------------------------------------------------------

@dataclass
class DriveRecord:
    """One control tick as seen by the plant process."""

    seq: int
    t: float
    state: np.ndarray          # (9,) state sent for this tick
    applied: np.ndarray        # (4,) valves + gear speed fed to the plant
    received: bool             # a fresh command arrived and was used
    injected_drop: bool        # reply discarded by the loss schedule
    timeout: bool              # no reply within the wait budget
    failsafe: bool             # silence exceeded the budget; valves zeroed


def _await_reply(sock, expected_seq: int, budget: float,
                 stats: LinkStats) -> PacketCommand:
    deadline = time.monotonic() + budget
    while time.monotonic() < deadline:
        try:
            buf, _ = sock.recvfrom(4 * COMMAND_SIZE)
        except socket.timeout:
            continue
        try:
            cmd = decode_command(buf)
        except FormatError:
            stats.malformed += 1
            continue
        if cmd.seq < expected_seq:
            stats.stale += 1
            continue
        return cmd
    return None


def udp_drive(params: PlantParams, target, cycles: int, *, q0=None,
              gear: str = "medium", load_fn: Callable = None, dt: float = DT,
              drop_rate: float = 0.0, drop_seed: int = 0, silence=None,
              failsafe_after: float = 1.0, reply_timeout: float = 2.0,
              realtime: bool = False) -> tuple:
    """Run the plant against a remote controller; returns (records, stats).

    One state packet per tick; the matching reply is awaited before the
    plant steps (lockstep).  Ticks selected by the seeded `drop_rate`
    schedule, or inside the `silence` half-open tick window, discard their
    reply after receiving it — deterministic loss injection.  Lost replies
    hold the last valid command; once the silent stretch exceeds
    `failsafe_after` seconds of plant time, valves are zeroed until a
    fresh command arrives.  With `realtime` the loop paces itself to `dt`
    per tick; otherwise it runs flat out.
    """
    if cycles < 1:
        raise ConfigError("cycles must be positive")
    stats = LinkStats()
    drops = drop_schedule(cycles, drop_rate, drop_seed)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(0.02)
    state = initial_state(params, q0=q0, gear=gear)
    held = np.array([0.0, 0.0, 0.0, state.gear_speed])
    t_last_good = 0.0
    records = []
    t_wall0 = time.monotonic()
    try:
        for k in range(cycles):
            seq = k + 1
            t = k * dt
            sock.sendto(encode_state(PacketState(seq=seq, t=t,
                                                 state=state.state_vector())),
                        tuple(target))
            stats.sent += 1
            reply = _await_reply(sock, seq, reply_timeout, stats)
            timed_out = reply is None
            if timed_out:
                stats.timeouts += 1
            injected = bool(drops[k]) or (
                silence is not None and silence[0] <= k < silence[1])
            fresh = reply is not None and not injected
            if fresh:
                stats.received += 1
                idx = reply.gear_index
                if idx >= len(params.gears):
                    stats.malformed += 1
                    fresh = False
                else:
                    held = np.concatenate([reply.valves,
                                           [params.gears[idx]]])
                    t_last_good = t
            # small slack so subtraction noise cannot trip the boundary tick
            failsafe = not fresh and (t - t_last_good) > failsafe_after + 1e-9
            applied = held.copy()
            if failsafe:
                applied[:3] = 0.0
                stats.failsafe_ticks += 1
            records.append(DriveRecord(
                seq=seq, t=t, state=state.state_vector(),
                applied=applied.copy(), received=fresh,
                injected_drop=injected and reply is not None,
                timeout=timed_out, failsafe=failsafe))
            load = 0.0 if load_fn is None else float(load_fn(t))
            state, _ = plant_step(state, params, applied, load=load, dt=dt)
            if realtime:
                lag = t_wall0 + (k + 1) * dt - time.monotonic()
                if lag > 0:
                    time.sleep(lag)
    finally:
        sock.close()
    return records, stats
