"""Pose datagrams between the vision side and the control side.

Wire format (little-endian, no padding, 80 bytes)::

    offset size type     field
    0      2    bytes    magic b"PD" (0x50 0x44)
    2      1    uint8    version (1)
    3      1    uint8    ooi_id (0 tool, 1 target)
    4      4    uint32   sequence
    8      8    float64  timestamp [s]
    16     32   4xfloat64 quaternion w, x, y, z
    48     24   3xfloat64 position x, y, z [m]
    72     8    float64  confidence
"""

from __future__ import annotations

import heapq
import math
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MalformedPacketError
from .geometry import Transform, quat_from_matrix
from .simworld import OOI_IDS, PoseMeasurement

MAGIC = b"PD"
VERSION = 1
_FMT = struct.Struct("<2sBBId4d3dd")
PACKET_SIZE = _FMT.size

OOI_CODES = {name: code for code, name in enumerate(OOI_IDS)}


@dataclass(frozen=True)
class PoseDatagram:
    ooi_id: int
    sequence: int
    timestamp: float
    quaternion: tuple
    position: tuple
    confidence: float
    version: int = VERSION


def encode(d: PoseDatagram) -> bytes:
    if not 0 <= d.sequence < 2**32:
        raise ValueError("sequence must fit in 32 bits")
    return _FMT.pack(MAGIC, d.version, d.ooi_id, d.sequence, d.timestamp,
                     *d.quaternion, *d.position, d.confidence)


def decode(data: bytes) -> PoseDatagram:
    if len(data) != PACKET_SIZE:
        raise MalformedPacketError("length", f"{len(data)} bytes, expected {PACKET_SIZE}")
    magic, version, ooi, seq, t, qw, qx, qy, qz, px, py, pz, conf = _FMT.unpack(data)
    if magic != MAGIC:
        raise MalformedPacketError("magic", repr(magic))
    if version != VERSION:
        raise MalformedPacketError("version", str(version))
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if not abs(n - 1.0) <= 1e-6:
        raise MalformedPacketError("quaternion", f"norm {n!r}")
    return PoseDatagram(ooi, seq, t, (qw, qx, qy, qz), (px, py, pz), conf, version)


def datagram_from_measurement(m: PoseMeasurement, sequence: int) -> PoseDatagram:
    q = quat_from_matrix(m.T_cam_ooi.rotation)
    return PoseDatagram(OOI_CODES[m.ooi_id], sequence, float(m.timestamp),
                        tuple(float(v) for v in q),
                        tuple(float(v) for v in m.T_cam_ooi.translation),
                        float(m.confidence))


def measurement_from_datagram(d: PoseDatagram) -> PoseMeasurement:
    return PoseMeasurement(OOI_IDS[d.ooi_id], Transform.from_quat_pos(d.quaternion, d.position),
                           d.confidence, d.timestamp)


class LoopbackChannel:
    """In-process datagram link with seeded loss, latency and jitter.

    One producer thread may call ``send`` while one consumer thread calls
    ``recv``. Payload bytes are delivered unchanged or not at all.
    """

    def __init__(self, loss_rate: float = 0.0, latency: float = 0.0, jitter: float = 0.0,
                 seed: int = 0):
        if not 0.0 <= loss_rate <= 1.0 or latency < 0 or jitter < 0:
            raise ValueError("invalid link parameters")
        self.loss_rate = loss_rate
        self.latency = latency
        self.jitter = jitter
        self._rng = np.random.default_rng(seed)
        self._queue: list = []
        self._count = 0
        self._lock = threading.Lock()

    def send(self, payload: bytes, now: float) -> None:
        with self._lock:
            # both draws are made for every packet so the stream is seed-stable
            lost = self._rng.random() < self.loss_rate
            delay = self.latency + self.jitter * self._rng.random()
            self._count += 1
            if not lost:
                heapq.heappush(self._queue, (now + delay, self._count, bytes(payload)))

    def recv(self, now: float) -> list[bytes]:
        """All payloads whose delivery time is <= ``now``, in arrival order."""
        out = []
        with self._lock:
            while self._queue and self._queue[0][0] <= now:
                out.append(heapq.heappop(self._queue)[2])
        return out

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)


class PoseReceiver:
    """Decodes payloads and drops anything not newer than the last sequence
    seen on its OOI stream. Malformed packets are counted and skipped."""

    def __init__(self):
        self.last_seq: dict[int, int] = {}
        self.dropped_stale = 0
        self.malformed: dict[str, int] = {}

    def accept(self, payloads) -> list[PoseDatagram]:
        out = []
        for raw in payloads:
            try:
                d = decode(raw)
            except MalformedPacketError as exc:
                self.malformed[exc.reason] = self.malformed.get(exc.reason, 0) + 1
                continue
            last = self.last_seq.get(d.ooi_id)
            if last is not None and d.sequence <= last:
                self.dropped_stale += 1
                continue
            self.last_seq[d.ooi_id] = d.sequence
            out.append(d)
        return out


class PoseSender:
    """Keeps one strictly increasing sequence counter per OOI stream."""

    def __init__(self, channel):
        self.channel = channel
        self._seq: dict[str, int] = {}

    def send(self, m: PoseMeasurement, now: float) -> PoseDatagram:
        seq = self._seq.get(m.ooi_id, -1) + 1
        self._seq[m.ooi_id] = seq
        d = datagram_from_measurement(m, seq)
        self.channel.send(encode(d), now)
        return d


class UdpLink:
    """Same byte format over a real UDP socket (optional adapter)."""

    def __init__(self, bind: tuple[str, int] = ("127.0.0.1", 0),
                 peer: Optional[tuple[str, int]] = None, timeout: float = 0.0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.settimeout(timeout if timeout > 0 else None)
        if timeout == 0:
            self.sock.setblocking(False)
        self.peer = peer

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def send(self, payload: bytes, now: float = 0.0) -> None:
        if self.peer is None:
            raise RuntimeError("no peer address configured")
        self.sock.sendto(payload, self.peer)

    def recv(self, now: float = 0.0) -> list[bytes]:
        out = []
        while True:
            try:
                data, _ = self.sock.recvfrom(2048)
            except (BlockingIOError, socket.timeout):
                break
            out.append(data)
            if self.sock.gettimeout() is not None:
                break
        return out

    def close(self):
        self.sock.close()
