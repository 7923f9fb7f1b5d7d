"""The operator-side service.

Ingests hand samples from pluggable pose sources, calibrates them, converts
them to deltas for the robot host, keeps the digital-twin state up to date,
fits movement primitives from returned trajectories, persists them, and
uploads them for execution.
"""

from __future__ import annotations

import csv
import queue
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dmp, kinematics, protocol
from .calibration import CalibrationModel, apply as apply_calibration, identity_calibration
from .kinematics import DhTable
from .planner import SceneObject
from .protocol import (
    Ack,
    DmpModelUpload,
    ExecuteToObject,
    HandDelta,
    JointState,
    NackError,
    SceneSnapshot,
    StreamDecoder,
    TeachStart,
    TeachStop,
    TrajectoryUpload,
    WireMessage,
    encode,
    reassemble_chunks,
)

LATENCY_EWMA_ALPHA = 0.2
DEFAULT_GAIN = 1.0
DEFAULT_STEP_CAP = kinematics.DEFAULT_STEP_CAP


class GatewayError(RuntimeError):
    pass


class CommandRejected(GatewayError):
    """The host answered a command with a Nack."""

    def __init__(self, nack: NackError):
        super().__init__(f"host rejected command: code={nack.code} {nack.detail}")
        self.nack = nack


@dataclass(frozen=True)
class HandSample:
    frame: int
    position: tuple[float, float, float]
    t: float


@dataclass(frozen=True)
class TwinState:
    """Local replica of the remote robot, folded from host messages only."""

    q: tuple[float, ...] | None = None
    scene: tuple[SceneObject, ...] = ()
    last_ack_frame: int = 0
    link_latency_estimate: float = 0.0


def twin_update(
    state: TwinState,
    msg: WireMessage,
    sent_at: float | None = None,
    received_at: float | None = None,
) -> TwinState:
    """Pure fold of one host message into the twin state."""
    if isinstance(msg, JointState):
        return replace(state, q=msg.q)
    if isinstance(msg, SceneSnapshot):
        return replace(state, scene=msg.objects)
    if isinstance(msg, Ack):
        new = state
        if msg.ref_frame > state.last_ack_frame:
            new = replace(new, last_ack_frame=msg.ref_frame)
        if sent_at is not None and received_at is not None:
            rtt = received_at - sent_at
            est = state.link_latency_estimate
            est = rtt if est == 0.0 else (1 - LATENCY_EWMA_ALPHA) * est + LATENCY_EWMA_ALPHA * rtt
            new = replace(new, link_latency_estimate=est)
        return new
    return state


def sample_to_delta(
    prev: HandSample,
    cur: HandSample,
    cal: CalibrationModel,
    gain: float = DEFAULT_GAIN,
    step_cap: float = DEFAULT_STEP_CAP,
) -> HandDelta:
    """Calibrated, gain-scaled hand displacement, clamped per axis."""
    if cur.frame <= prev.frame:
        raise GatewayError("hand sample frames must increase")
    raw = gain * (
        apply_calibration(cal, np.asarray(cur.position))
        - apply_calibration(cal, np.asarray(prev.position))
    )
    clamped = np.clip(raw, -step_cap, step_cap)
    return HandDelta(frame=cur.frame, delta=tuple(float(v) for v in clamped))


class DeltaStream:
    """Chains consecutive samples into deltas and accounts for clamp losses."""

    def __init__(self, cal: CalibrationModel, gain: float = DEFAULT_GAIN, step_cap: float = DEFAULT_STEP_CAP):
        self.cal = cal
        self.gain = gain
        self.step_cap = step_cap
        self.prev: HandSample | None = None
        self.clamp_events = 0
        self.clamp_loss = np.zeros(3)

    def push(self, sample: HandSample) -> HandDelta | None:
        if self.prev is None:
            self.prev = sample
            return None
        raw = self.gain * (
            apply_calibration(self.cal, np.asarray(sample.position))
            - apply_calibration(self.cal, np.asarray(self.prev.position))
        )
        delta = sample_to_delta(self.prev, sample, self.cal, self.gain, self.step_cap)
        loss = raw - np.asarray(delta.delta)
        if np.any(loss != 0.0):
            self.clamp_events += 1
            self.clamp_loss += loss
        self.prev = sample
        return delta


# --- pose sources ---

class PoseSource:
    """Yields ordered hand samples; next() returns None at end of stream."""

    def next(self) -> HandSample | None:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self):
        pass


class FileReplay(PoseSource):
    """Replays a CSV with header t,x,y,z; frames are assigned sequentially."""

    def __init__(self, path: str | Path):
        with open(path) as f:
            reader = csv.reader(f)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "x", "y", "z"]:
                raise GatewayError("replay CSV must have header t,x,y,z")
            self._rows = [[float(v) for v in row] for row in reader]
        self._index = 0

    def next(self) -> HandSample | None:
        if self._index >= len(self._rows):
            return None
        t, x, y, z = self._rows[self._index]
        self._index += 1
        return HandSample(frame=self._index, position=(x, y, z), t=t)


class ScriptedGenerator(PoseSource):
    """Generates samples along a parametric segment; used by tests and demos."""

    def __init__(self, start, step, count: int, dt: float = 0.02, frame_offset: int = 0):
        self.start = np.asarray(start, dtype=float)
        self.step = np.asarray(step, dtype=float)
        self.count = count
        self.dt = dt
        self.frame_offset = frame_offset
        self._i = 0

    def next(self) -> HandSample | None:
        if self._i >= self.count:
            return None
        pos = self.start + self._i * self.step
        self._i += 1
        frame = self.frame_offset + self._i
        return HandSample(frame=frame, position=tuple(float(v) for v in pos), t=(frame - 1) * self.dt)


class ConsoleBridgeSource(PoseSource):
    """Fed by the console WebSocket; keeps only the latest backlog sample."""

    def __init__(self):
        self._queue: queue.Queue = queue.Queue()
        self._frame = 0
        self._closed = False

    def push_position(self, x: float, y: float, z: float):
        self._frame += 1
        self._queue.put(HandSample(frame=self._frame, position=(x, y, z), t=time.monotonic()))

    def close(self):
        self._closed = True
        self._queue.put(None)

    def next(self) -> HandSample | None:
        try:
            sample = self._queue.get(timeout=0.1)
        except queue.Empty:
            return None if self._closed else self.next()
        # decimate: drain any backlog, keep the newest sample
        while True:
            try:
                later = self._queue.get_nowait()
            except queue.Empty:
                return sample
            if later is None:
                return sample
            sample = later


# --- model training and persistence ---

class DmpStore:
    """One JSON document per trained model, named <object_id>.dmp.json."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, object_id: str) -> Path:
        return self.directory / f"{object_id}.dmp.json"

    def save(self, model: dmp.DmpModel) -> Path:
        if not model.object_id:
            raise GatewayError("model must carry an object id before persisting")
        path = self.path_for(model.object_id)
        path.write_text(dmp.model_to_json(model))
        return path

    def load(self, object_id: str) -> dmp.DmpModel:
        return dmp.model_from_json(self.path_for(object_id).read_text())

    def list_ids(self) -> list[str]:
        return sorted(p.name.removesuffix(".dmp.json") for p in self.directory.glob("*.dmp.json"))


def train_from_upload(
    chunks: list[TrajectoryUpload],
    object_id: str,
    n_basis: int = dmp.DEFAULT_N_BASIS,
    space: dmp.DmpSpace = dmp.DmpSpace.JOINT,
    dh: DhTable | None = None,
    store: DmpStore | None = None,
) -> dmp.DmpModel:
    """Reassemble an uploaded teach log and fit one DMP per degree of freedom.

    Joint-space training fits the six joint series directly; Cartesian
    training maps the log through forward kinematics first (needs dh).
    """
    log = reassemble_chunks(chunks)
    if space is dmp.DmpSpace.CARTESIAN:
        if dh is None:
            raise GatewayError("cartesian training needs the kinematics table")
        positions = np.vstack([kinematics.tool_position(q, dh) for q in log.positions])
    else:
        positions = log.positions
    demo = dmp.Demonstration(positions=positions, dt=log.dt)
    model = dmp.fit(demo, n_basis=n_basis, space=space, object_id=object_id)
    if store is not None:
        store.save(model)
    return model


# --- host link runtime ---

@dataclass
class GatewayConfig:
    gain: float = DEFAULT_GAIN
    step_cap: float = DEFAULT_STEP_CAP
    train_space: dmp.DmpSpace = dmp.DmpSpace.JOINT
    n_basis: int = dmp.DEFAULT_N_BASIS
    reply_timeout: float = 10.0
    upload_timeout: float = 10.0


class GatewayRuntime:
    """Owns the TCP link to the robot host plus the twin state.

    Pose ingestion, the host link, and the console bridge talk through
    queues; the twin is replaced wholesale under a lock so readers always
    see a consistent snapshot.
    """

    def __init__(
        self,
        host_addr: tuple[str, int],
        calibration: CalibrationModel | None = None,
        store: DmpStore | None = None,
        dh: DhTable | None = None,
        config: GatewayConfig | None = None,
    ):
        self.config = config or GatewayConfig()
        self.calibration = calibration or identity_calibration()
        self.store = store
        self.dh = dh or kinematics.default_table()
        self.deltas = DeltaStream(self.calibration, self.config.gain, self.config.step_cap)
        self._twin = TwinState()
        self._twin_lock = threading.Lock()
        self._pending_sends: dict[int, float] = {}
        self._replies: queue.Queue = queue.Queue()
        self._chunks: queue.Queue = queue.Queue()
        self._events: list[dict] = []
        self._event_listeners: list = []
        self.session = "idle"

        self._sock = socket.create_connection(host_addr, timeout=10.0)
        self._sock.settimeout(0.2)
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # --- twin access ---

    @property
    def twin(self) -> TwinState:
        with self._twin_lock:
            return self._twin

    def _fold_twin(self, msg: WireMessage, sent_at=None, received_at=None):
        with self._twin_lock:
            self._twin = twin_update(self._twin, msg, sent_at=sent_at, received_at=received_at)

    def add_event_listener(self, fn):
        self._event_listeners.append(fn)

    def _notify(self, event: dict):
        self._events.append(event)
        for fn in self._event_listeners:
            fn(event)

    # --- link I/O ---

    def _read_loop(self):
        decoder = StreamDecoder()
        while not self._closed.is_set():
            try:
                data = self._sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            for msg in decoder.feed(data):
                self._dispatch(msg)

    def _dispatch(self, msg: WireMessage):
        now = time.monotonic()
        if isinstance(msg, Ack):
            sent_at = self._pending_sends.pop(msg.ref_frame, None)
            self._fold_twin(msg, sent_at=sent_at, received_at=now if sent_at is not None else None)
            self._replies.put(msg)
        elif isinstance(msg, NackError):
            self._replies.put(msg)
            self._notify({"event": "nack", "code": msg.code, "detail": msg.detail})
        elif isinstance(msg, TrajectoryUpload):
            self._chunks.put(msg)
        elif isinstance(msg, (JointState, SceneSnapshot)):
            self._fold_twin(msg)
            self._notify({"event": "twin"})
        # anything else is ignored

    def _send(self, msg: WireMessage):
        self._sock.sendall(encode(msg))

    def _await_reply(self, kinds, timeout: float | None = None) -> WireMessage:
        deadline = time.monotonic() + (timeout or self.config.reply_timeout)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise GatewayError("timed out waiting for a host reply")
            try:
                msg = self._replies.get(timeout=remaining)
            except queue.Empty:
                continue
            if isinstance(msg, kinds) or isinstance(msg, NackError):
                return msg

    # --- steering ---

    def send_sample(self, sample: HandSample) -> bool:
        """Push one pose sample; returns False when the motion was refused."""
        delta = self.deltas.push(sample)
        if delta is None:
            return True
        self._pending_sends[delta.frame] = time.monotonic()
        self._send(delta)
        reply = self._await_reply((Ack,))
        if isinstance(reply, NackError):
            self._notify({"event": "steer_refused", "code": reply.code})
            return False
        if self.session == "idle":
            self._set_session("steering")
        return True

    def drive(self, source: PoseSource) -> int:
        """Consume a pose source to exhaustion; returns samples applied."""
        applied = 0
        while True:
            sample = source.next()
            if sample is None:
                return applied
            if self.send_sample(sample):
                applied += 1

    def _set_session(self, value: str):
        self.session = value
        self._notify({"event": "session", "state": value})

    # --- commands (stop-and-wait) ---

    def teach_start(self):
        self._send(TeachStart())
        reply = self._await_reply((Ack,))
        if isinstance(reply, NackError):
            raise CommandRejected(reply)
        self._set_session("teaching")

    def teach_stop_and_train(self, object_id: str) -> dmp.DmpModel:
        """Stop teaching, collect the uploaded log, train, persist, upload."""
        self._send(TeachStop())
        chunks: list[TrajectoryUpload] = []
        deadline = time.monotonic() + self.config.upload_timeout
        expected: int | None = None
        while expected is None or len(chunks) < expected:
            # a Nack may arrive instead of chunks
            try:
                nack = self._replies.get_nowait()
                if isinstance(nack, NackError):
                    raise CommandRejected(nack)
            except queue.Empty:
                pass
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise protocol.IncompleteUploadError(
                    f"received {len(chunks)} of {expected or '?'} chunks before timeout"
                )
            try:
                chunk = self._chunks.get(timeout=min(remaining, 0.2))
            except queue.Empty:
                continue
            chunks.append(chunk)
            expected = chunk.chunk_count
        model = train_from_upload(
            chunks,
            object_id,
            n_basis=self.config.n_basis,
            space=self.config.train_space,
            dh=self.dh,
            store=self.store,
        )
        self._send(DmpModelUpload(payload=dmp.model_to_json(model).encode()))
        reply = self._await_reply((Ack,))
        if isinstance(reply, NackError):
            raise CommandRejected(reply)
        self._set_session("idle")
        self._notify({"event": "trained", "object_id": object_id})
        return model

    def execute_to_object(self, object_id: str, settle_timeout: float = 30.0):
        """Trigger a stored movement; returns when the completion ack arrives."""
        self._send(ExecuteToObject(object_id=object_id))
        self._set_session("executing")
        try:
            reply = self._await_reply((Ack,), timeout=settle_timeout)
            if isinstance(reply, NackError):
                raise CommandRejected(reply)
        finally:
            self._set_session("idle")

    def close(self):
        self._closed.set()
        try:
            self._sock.close()
        except OSError:
            pass
        self._reader.join(timeout=2.0)
