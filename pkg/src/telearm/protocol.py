"""Binary message layer for the operator/robot TCP link.

Frame layout: u32 little-endian payload length, then the payload itself,
which is a u8 message-type tag followed by the message fields in declared
order.  Integers are little-endian, reals IEEE-754 binary64 little-endian,
strings a u16 byte length plus UTF-8 bytes, arrays a u16 count plus
elements.  Tag 0x00 is reserved for future version negotiation.

Every message except trajectory and model uploads fits in 4096 bytes, so a
session exchanges only a few kilobytes of steering data per second.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .kinematics import N_JOINTS, TrajectoryLog
from .planner import Box, SceneObject, Sphere

MAX_PLAIN_FRAME = 4096      # limit for every non-chunked message
MAX_FRAME = 1 << 20         # hard decoder limit, guards hostile lengths
MAX_SCENE_OBJECTS = 64
MAX_DETAIL_BYTES = 256
LENGTH_PREFIX = struct.Struct("<I")
SAMPLE_ROW_BYTES = 8 * N_JOINTS
CHUNK_OVERHEAD = 4 + 1 + 8 + 2 + 4 + 4  # length, tag, dt, count, index, total


class ProtocolError(ValueError):
    """Malformed frame: unknown tag, bad length, or field mismatch."""


class SizeError(ValueError):
    """Message would exceed the non-chunked frame budget."""


class ErrorCode(IntEnum):
    UNREACHABLE = 1
    EMPTY_DEMO = 2
    BAD_STATE = 3
    NO_OBJECT = 4
    NO_MODEL = 5
    BAD_MESSAGE = 6
    INCOMPLETE_UPLOAD = 7


@dataclass(frozen=True)
class HandDelta:
    frame: int
    delta: tuple[float, float, float]


@dataclass(frozen=True)
class JointState:
    frame: int
    q: tuple[float, float, float, float, float, float]


@dataclass(frozen=True)
class SceneSnapshot:
    objects: tuple[SceneObject, ...]


@dataclass(frozen=True)
class TeachStart:
    pass


@dataclass(frozen=True)
class TeachStop:
    pass


@dataclass(eq=False)
class TrajectoryUpload:
    dt: float
    samples: np.ndarray  # (T, 6)
    chunk_index: int
    chunk_count: int

    def __eq__(self, other):
        return (
            isinstance(other, TrajectoryUpload)
            and self.dt == other.dt
            and self.chunk_index == other.chunk_index
            and self.chunk_count == other.chunk_count
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class DmpModelUpload:
    payload: bytes


@dataclass(frozen=True)
class ExecuteToObject:
    object_id: str


@dataclass(frozen=True)
class Ack:
    ref_frame: int


@dataclass(frozen=True)
class NackError:
    code: int
    detail: str


WireMessage = (
    HandDelta
    | JointState
    | SceneSnapshot
    | TeachStart
    | TeachStop
    | TrajectoryUpload
    | DmpModelUpload
    | ExecuteToObject
    | Ack
    | NackError
)

TAG_HAND_DELTA = 0x01
TAG_JOINT_STATE = 0x02
TAG_SCENE_SNAPSHOT = 0x03
TAG_TEACH_START = 0x04
TAG_TEACH_STOP = 0x05
TAG_TRAJECTORY_UPLOAD = 0x06
TAG_DMP_MODEL_UPLOAD = 0x07
TAG_EXECUTE_TO_OBJECT = 0x08
TAG_ACK = 0x09
TAG_NACK_ERROR = 0x0A


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v: int):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def string(self, s: str):
        raw = s.encode()
        if len(raw) > 0xFFFF:
            raise SizeError("string too long for the wire")
        self.u16(len(raw))
        self.parts.append(raw)

    def raw(self, b: bytes):
        self.parts.append(b)

    def payload(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("payload shorter than its declared fields")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def string(self) -> str:
        n = self.u16()
        try:
            return self._take(n).decode()
        except UnicodeDecodeError as exc:
            raise ProtocolError("invalid UTF-8 in string field") from exc

    def expect_end(self):
        if self.pos != len(self.data):
            raise ProtocolError("trailing bytes after message fields")


def _encode_scene_object(w: _Writer, obj: SceneObject):
    w.string(obj.id)
    for v in obj.centroid:
        w.f64(v)
    if isinstance(obj.shape, Sphere):
        w.u8(0)
        w.f64(obj.shape.radius)
    else:
        w.u8(1)
        for v in obj.shape.half_extents:
            w.f64(v)


def _decode_scene_object(r: _Reader) -> SceneObject:
    obj_id = r.string()
    centroid = (r.f64(), r.f64(), r.f64())
    kind = r.u8()
    if kind == 0:
        shape: Sphere | Box = Sphere(radius=r.f64())
    elif kind == 1:
        shape = Box(half_extents=(r.f64(), r.f64(), r.f64()))
    else:
        raise ProtocolError(f"unknown shape kind {kind}")
    try:
        return SceneObject(id=obj_id, centroid=centroid, shape=shape)
    except ValueError as exc:
        raise ProtocolError(str(exc)) from exc


def encode(msg: WireMessage) -> bytes:
    """Serialize one message into a length-prefixed frame."""
    w = _Writer()
    chunked = False
    if isinstance(msg, HandDelta):
        w.u8(TAG_HAND_DELTA)
        w.u64(msg.frame)
        for v in msg.delta:
            w.f64(v)
    elif isinstance(msg, JointState):
        w.u8(TAG_JOINT_STATE)
        w.u64(msg.frame)
        for v in msg.q:
            w.f64(v)
    elif isinstance(msg, SceneSnapshot):
        if len(msg.objects) > MAX_SCENE_OBJECTS:
            raise SizeError(f"snapshot limited to {MAX_SCENE_OBJECTS} objects")
        w.u8(TAG_SCENE_SNAPSHOT)
        w.u16(len(msg.objects))
        for obj in msg.objects:
            _encode_scene_object(w, obj)
    elif isinstance(msg, TeachStart):
        w.u8(TAG_TEACH_START)
    elif isinstance(msg, TeachStop):
        w.u8(TAG_TEACH_STOP)
    elif isinstance(msg, TrajectoryUpload):
        chunked = True
        samples = np.asarray(msg.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != N_JOINTS:
            raise SizeError("samples must have shape (T, 6)")
        if samples.shape[0] > 0xFFFF:
            raise SizeError("too many samples for one chunk")
        w.u8(TAG_TRAJECTORY_UPLOAD)
        w.f64(msg.dt)
        w.u16(samples.shape[0])
        w.raw(samples.astype("<f8").tobytes())
        w.u32(msg.chunk_index)
        w.u32(msg.chunk_count)
    elif isinstance(msg, DmpModelUpload):
        chunked = True
        if len(msg.payload) > 0xFFFF:
            raise SizeError("model payload exceeds 65535 bytes")
        w.u8(TAG_DMP_MODEL_UPLOAD)
        w.u16(len(msg.payload))
        w.raw(msg.payload)
    elif isinstance(msg, ExecuteToObject):
        w.u8(TAG_EXECUTE_TO_OBJECT)
        w.string(msg.object_id)
    elif isinstance(msg, Ack):
        w.u8(TAG_ACK)
        w.u64(msg.ref_frame)
    elif isinstance(msg, NackError):
        if len(msg.detail.encode()) > MAX_DETAIL_BYTES:
            raise SizeError("nack detail too long")
        w.u8(TAG_NACK_ERROR)
        w.u16(msg.code)
        w.string(msg.detail)
    else:
        raise TypeError(f"not a wire message: {type(msg).__name__}")

    payload = w.payload()
    frame = LENGTH_PREFIX.pack(len(payload)) + payload
    if not chunked and len(frame) > MAX_PLAIN_FRAME:
        raise SizeError(f"{type(msg).__name__} frame of {len(frame)} bytes exceeds {MAX_PLAIN_FRAME}")
    return frame


def _decode_payload(payload: bytes) -> WireMessage:
    r = _Reader(payload)
    tag = r.u8()
    if tag == TAG_HAND_DELTA:
        msg: WireMessage = HandDelta(frame=r.u64(), delta=(r.f64(), r.f64(), r.f64()))
    elif tag == TAG_JOINT_STATE:
        msg = JointState(frame=r.u64(), q=tuple(r.f64() for _ in range(N_JOINTS)))
    elif tag == TAG_SCENE_SNAPSHOT:
        count = r.u16()
        if count > MAX_SCENE_OBJECTS:
            raise ProtocolError(f"snapshot object count {count} exceeds {MAX_SCENE_OBJECTS}")
        msg = SceneSnapshot(objects=tuple(_decode_scene_object(r) for _ in range(count)))
    elif tag == TAG_TEACH_START:
        msg = TeachStart()
    elif tag == TAG_TEACH_STOP:
        msg = TeachStop()
    elif tag == TAG_TRAJECTORY_UPLOAD:
        dt = r.f64()
        count = r.u16()
        raw = r._take(count * SAMPLE_ROW_BYTES)
        samples = np.frombuffer(raw, dtype="<f8").reshape(count, N_JOINTS).copy()
        msg = TrajectoryUpload(dt=dt, samples=samples, chunk_index=r.u32(), chunk_count=r.u32())
    elif tag == TAG_DMP_MODEL_UPLOAD:
        n = r.u16()
        msg = DmpModelUpload(payload=bytes(r._take(n)))
    elif tag == TAG_EXECUTE_TO_OBJECT:
        msg = ExecuteToObject(object_id=r.string())
    elif tag == TAG_ACK:
        msg = Ack(ref_frame=r.u64())
    elif tag == TAG_NACK_ERROR:
        msg = NackError(code=r.u16(), detail=r.string())
    else:
        raise ProtocolError(f"unknown message tag 0x{tag:02X}")
    r.expect_end()
    return msg


def try_decode(buffer: bytes) -> tuple[WireMessage | None, int]:
    """Decode the first frame in the buffer.

    Returns (message, bytes consumed), or (None, 0) when more bytes are
    needed for a complete frame.  Raises ProtocolError on malformed input.
    """
    if len(buffer) < LENGTH_PREFIX.size:
        return None, 0
    (length,) = LENGTH_PREFIX.unpack_from(buffer)
    if length < 1:
        raise ProtocolError("frame length must cover at least the tag byte")
    if length > MAX_FRAME:
        raise ProtocolError(f"declared frame length {length} exceeds {MAX_FRAME}")
    end = LENGTH_PREFIX.size + length
    if len(buffer) < end:
        return None, 0
    return _decode_payload(bytes(buffer[LENGTH_PREFIX.size : end])), end


def decode(frame: bytes) -> WireMessage:
    """Decode exactly one complete frame; trailing bytes are an error."""
    msg, consumed = try_decode(frame)
    if msg is None:
        raise ProtocolError("incomplete frame")
    if consumed != len(frame):
        raise ProtocolError("trailing bytes after frame")
    return msg


class StreamDecoder:
    """Incremental framing reader for one connection (single consumer)."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf.extend(data)
        out: list[WireMessage] = []
        while True:
            msg, consumed = try_decode(self._buf)
            if msg is None:
                return out
            del self._buf[:consumed]
            out.append(msg)

    def pending_bytes(self) -> int:
        return len(self._buf)

    def close(self):
        """Stream ended; leftover bytes mean a truncated frame."""
        if self._buf:
            raise ProtocolError(f"stream closed with {len(self._buf)} buffered bytes")


def chunk_capacity(max_chunk_bytes: int) -> int:
    return (max_chunk_bytes - CHUNK_OVERHEAD) // SAMPLE_ROW_BYTES


def chunk_trajectory(log: TrajectoryLog, max_chunk_bytes: int = MAX_PLAIN_FRAME) -> list[TrajectoryUpload]:
    """Split a trajectory log into uploads whose frames fit the byte limit."""
    per_chunk = chunk_capacity(max_chunk_bytes)
    if per_chunk < 1:
        raise SizeError(f"max_chunk_bytes must fit at least one {SAMPLE_ROW_BYTES}-byte sample row")
    total = len(log)
    n_chunks = math.ceil(total / per_chunk)
    return [
        TrajectoryUpload(
            dt=log.dt,
            samples=log.positions[i * per_chunk : (i + 1) * per_chunk].copy(),
            chunk_index=i,
            chunk_count=n_chunks,
        )
        for i in range(n_chunks)
    ]


class IncompleteUploadError(ValueError):
    """Chunk set is missing pieces or is internally inconsistent."""


def reassemble_chunks(chunks: list[TrajectoryUpload]) -> TrajectoryLog:
    """Rebuild the trajectory log from a complete, consistent chunk set."""
    if not chunks:
        raise IncompleteUploadError("no chunks received")
    count = chunks[0].chunk_count
    dt = chunks[0].dt
    by_index: dict[int, TrajectoryUpload] = {}
    for c in chunks:
        if c.chunk_count != count or c.dt != dt:
            raise IncompleteUploadError("chunk metadata inconsistent across chunks")
        if c.chunk_index in by_index:
            raise IncompleteUploadError(f"duplicate chunk {c.chunk_index}")
        by_index[c.chunk_index] = c
    missing = sorted(set(range(count)) - set(by_index))
    if missing:
        raise IncompleteUploadError(f"missing chunks {missing}")
    positions = np.vstack([by_index[i].samples for i in range(count)])
    times = np.arange(positions.shape[0]) * dt
    return TrajectoryLog(times=times, positions=positions, dt=dt)
