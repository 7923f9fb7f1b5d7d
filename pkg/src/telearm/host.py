"""The robot-side service: owns the simulated arm and scene.

Applies incoming hand deltas through IK and short plans, records teaching
sessions, executes stored movement primitives toward objects, and streams
joint state and scene snapshots back to the operator side.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import dmp, kinematics, planner, protocol
from .kinematics import DhTable, TrajectoryLog, UnreachableError
from .planner import SceneObject
from .protocol import (
    Ack,
    DmpModelUpload,
    ErrorCode,
    ExecuteToObject,
    HandDelta,
    JointState,
    NackError,
    SceneSnapshot,
    StreamDecoder,
    TeachStart,
    TeachStop,
    WireMessage,
    encode,
)


class HostMode(Enum):
    IDLE = "idle"
    STEERING = "steering"
    TEACHING = "teaching"
    EXECUTING = "executing"


# The only mode transitions the control loop may take.
ALLOWED_TRANSITIONS = {
    (HostMode.IDLE, HostMode.STEERING),
    (HostMode.STEERING, HostMode.IDLE),
    (HostMode.STEERING, HostMode.TEACHING),
    (HostMode.TEACHING, HostMode.IDLE),
    (HostMode.IDLE, HostMode.EXECUTING),
    (HostMode.EXECUTING, HostMode.IDLE),
}


@dataclass
class HostConfig:
    dt: float = 0.02                  # control cadence, s
    step_cap: float = 0.05            # m, max Cartesian delta applied per message
    pre_grasp_offset: float = 0.10    # m above an object centroid
    safety_margin: float = planner.DEFAULT_SAFETY_MARGIN
    plan_step_size: float = planner.DEFAULT_STEP_SIZE
    chunk_bytes: int = protocol.MAX_PLAIN_FRAME
    reach_iterations: int = 200
    telemetry_buffer: int = 256       # outbound JointState backlog before dropping oldest


def _nack(code: ErrorCode, detail: str) -> NackError:
    return NackError(code=int(code), detail=detail[: protocol.MAX_DETAIL_BYTES])


def solve_reach(
    q_start: np.ndarray,
    target: np.ndarray,
    dh: DhTable,
    step_cap: float = kinematics.DEFAULT_STEP_CAP,
    max_steps: int = 200,
) -> np.ndarray:
    """Walk the tool to a Cartesian point with capped IK increments."""
    q = np.asarray(q_start, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    sub_step = 0.8 * step_cap
    for _ in range(max_steps):
        vec = target - kinematics.tool_position(q, dh)
        dist = float(np.linalg.norm(vec))
        if dist <= kinematics.IK_TOLERANCE:
            return q
        step = vec if dist <= sub_step else vec * (sub_step / dist)
        q = kinematics.ik_step(q, step, dh, step_cap=step_cap)
    residual = float(np.linalg.norm(target - kinematics.tool_position(q, dh)))
    if residual <= kinematics.IK_FAIL_RESIDUAL:
        return q
    raise UnreachableError(residual)


class RobotHost:
    """Single-threaded control core; one call per inbound message."""

    def __init__(
        self,
        dh: DhTable,
        scene: list[SceneObject] | None = None,
        config: HostConfig | None = None,
        event_sink=None,
    ):
        self.dh = dh
        self.config = config or HostConfig()
        self.scene: list[SceneObject] = list(scene or [])
        self.mode = HostMode.IDLE
        self.q_current = dh.home.copy()
        dh.check_limits(self.q_current)
        if not planner.collision_free(self.q_current, self.scene, dh, self.config.safety_margin):
            raise planner.SceneError("home configuration collides with the scene")
        self.active_samples: list[np.ndarray] | None = None
        self.dmp_store: dict[str, dmp.DmpModel] = {}
        self.last_applied_frame = 0
        self._out_frame = 0
        self.events: list[dict] = []
        self._event_sink = event_sink

    # --- bookkeeping ---

    def _emit_event(self, event: dict):
        self.events.append(event)
        if self._event_sink is not None:
            self._event_sink(event)

    def _set_mode(self, new_mode: HostMode):
        if new_mode == self.mode:
            return
        transition = (self.mode, new_mode)
        if transition not in ALLOWED_TRANSITIONS:
            raise RuntimeError(f"illegal mode transition {self.mode.value} -> {new_mode.value}")
        self._emit_event({"event": "mode", "from": self.mode.value, "to": new_mode.value})
        self.mode = new_mode

    def _next_joint_state(self) -> JointState:
        self._out_frame += 1
        return JointState(frame=self._out_frame, q=tuple(float(v) for v in self.q_current))

    def mode_trace(self) -> list[tuple[str, str]]:
        return [(e["from"], e["to"]) for e in self.events if e["event"] == "mode"]

    # --- message handling ---

    def handle(self, msg: WireMessage) -> list[WireMessage]:
        if isinstance(msg, HandDelta):
            return self.on_hand_delta(msg)
        if isinstance(msg, TeachStart):
            return self.on_teach_start()
        if isinstance(msg, TeachStop):
            return self.on_teach_stop()
        if isinstance(msg, ExecuteToObject):
            return self.on_execute_to_object(msg.object_id)
        if isinstance(msg, DmpModelUpload):
            return self.on_model_upload(msg)
        return [_nack(ErrorCode.BAD_MESSAGE, f"unexpected {type(msg).__name__}")]

    def on_hand_delta(self, msg: HandDelta) -> list[WireMessage]:
        if self.mode == HostMode.EXECUTING:
            return [_nack(ErrorCode.BAD_STATE, "steering rejected while executing")]
        if msg.frame <= self.last_applied_frame:
            return []  # stale frame, dropped silently
        delta = np.asarray(msg.delta, dtype=float)
        if delta.shape != (3,) or not np.all(np.isfinite(delta)):
            return [_nack(ErrorCode.BAD_MESSAGE, "delta must be a finite 3-vector")]
        norm = float(np.linalg.norm(delta))
        if norm > self.config.step_cap:
            delta = delta * (self.config.step_cap / norm)

        if self.mode == HostMode.IDLE:
            self._set_mode(HostMode.STEERING)

        try:
            q_target = kinematics.ik_step(self.q_current, delta, self.dh, step_cap=self.config.step_cap)
        except UnreachableError as exc:
            return [_nack(ErrorCode.UNREACHABLE, f"residual {exc.residual:.6f} m")]
        if not planner.collision_free(q_target, self.scene, self.dh, self.config.safety_margin):
            return [_nack(ErrorCode.UNREACHABLE, "target configuration collides")]

        micro = planner.straight_line_plan(
            self.q_current, q_target, self.scene, self.dh,
            step_size=self.config.plan_step_size, margin=self.config.safety_margin,
        )
        if micro is None:
            try:
                micro = planner.plan(
                    planner.PlanRequest(
                        q_start=self.q_current,
                        q_goal=q_target,
                        scene=self.scene,
                        step_size=self.config.plan_step_size,
                        rng_seed=msg.frame,
                    ),
                    self.dh,
                    margin=self.config.safety_margin,
                )
            except planner.NoPathError:
                return [_nack(ErrorCode.UNREACHABLE, "no collision-free micro path")]

        log = kinematics.execute(micro, self.dh, self.config.dt)
        self.q_current = log.positions[-1].copy()
        self.last_applied_frame = msg.frame
        if self.mode == HostMode.TEACHING and self.active_samples is not None:
            appended = log.positions[1:]
            if len(appended) == 0:
                appended = log.positions[-1:]  # hold sample keeps the log gap-free
            self.active_samples.extend(row.copy() for row in appended)
        return [Ack(ref_frame=msg.frame), self._next_joint_state()]

    def on_teach_start(self) -> list[WireMessage]:
        if self.mode != HostMode.STEERING:
            return [_nack(ErrorCode.BAD_STATE, f"teach start invalid in {self.mode.value}")]
        self._set_mode(HostMode.TEACHING)
        self.active_samples = [self.q_current.copy()]
        return [Ack(ref_frame=self.last_applied_frame)]

    def on_teach_stop(self) -> list[WireMessage]:
        if self.mode != HostMode.TEACHING or self.active_samples is None:
            return [_nack(ErrorCode.BAD_STATE, f"teach stop invalid in {self.mode.value}")]
        if len(self.active_samples) < 3:
            return [_nack(ErrorCode.EMPTY_DEMO, f"only {len(self.active_samples)} samples recorded")]
        positions = np.vstack(self.active_samples)
        log = TrajectoryLog(
            times=np.arange(len(positions)) * self.config.dt,
            positions=positions,
            dt=self.config.dt,
        )
        chunks = protocol.chunk_trajectory(log, self.config.chunk_bytes)
        self.active_samples = None
        self._set_mode(HostMode.IDLE)
        self._emit_event({"event": "teach_complete", "samples": len(positions)})
        return list(chunks)

    def on_execute_to_object(self, object_id: str) -> list[WireMessage]:
        if self.mode in (HostMode.TEACHING, HostMode.EXECUTING):
            return [_nack(ErrorCode.BAD_STATE, f"execute invalid in {self.mode.value}")]
        if self.mode == HostMode.STEERING:
            self._set_mode(HostMode.IDLE)  # steering session yields to execution
        obj = next((o for o in self.scene if o.id == object_id), None)
        if obj is None:
            return [_nack(ErrorCode.NO_OBJECT, f"no object {object_id!r} in scene")]
        model = self.dmp_store.get(object_id)
        if model is None:
            return [_nack(ErrorCode.NO_MODEL, f"no trained model for {object_id!r}")]
        pre_grasp = np.asarray(obj.centroid) + np.array([0.0, 0.0, self.config.pre_grasp_offset])
        try:
            q_goal = solve_reach(
                self.q_current, pre_grasp, self.dh,
                step_cap=self.config.step_cap, max_steps=self.config.reach_iterations,
            )
        except UnreachableError as exc:
            return [_nack(ErrorCode.UNREACHABLE, f"pre-grasp residual {exc.residual:.6f} m")]
        if not planner.collision_free(q_goal, self.scene, self.dh, self.config.safety_margin):
            return [_nack(ErrorCode.UNREACHABLE, "pre-grasp configuration collides")]

        self._set_mode(HostMode.EXECUTING)
        try:
            waypoints = self._rollout_waypoints(model, q_goal, pre_grasp)
            for q in waypoints:
                if not planner.collision_free(q, self.scene, self.dh, self.config.safety_margin):
                    return [_nack(ErrorCode.UNREACHABLE, "learned path collides with scene")]
            log = kinematics.execute(waypoints, self.dh, self.config.dt)
            replies: list[WireMessage] = []
            for row in log.positions:
                self.q_current = row.copy()
                replies.append(self._next_joint_state())
            replies.append(Ack(ref_frame=self.last_applied_frame))
            self._emit_event({"event": "execute_complete", "object_id": object_id, "samples": len(log)})
            return replies
        except UnreachableError as exc:
            return [_nack(ErrorCode.UNREACHABLE, f"tracking residual {exc.residual:.6f} m")]
        finally:
            self._set_mode(HostMode.IDLE)

    def _rollout_waypoints(self, model: dmp.DmpModel, q_goal: np.ndarray, pre_grasp: np.ndarray):
        if model.space is dmp.DmpSpace.JOINT:
            path = dmp.rollout(model, y0_new=self.q_current, g_new=q_goal, dt=self.config.dt)
            waypoints = [self.dh.clamp(row) for row in path]
            waypoints.append(q_goal.copy())
            return waypoints
        # Cartesian model: roll out the tool path, then track it with IK.
        start = kinematics.tool_position(self.q_current, self.dh)
        path = dmp.rollout(model, y0_new=start, g_new=pre_grasp, dt=self.config.dt)
        waypoints = [self.q_current.copy()]
        q = self.q_current.copy()
        for point in path[1:]:
            q = solve_reach(q, point, self.dh, step_cap=self.config.step_cap, max_steps=20)
            waypoints.append(q)
        waypoints.append(q_goal.copy())
        return waypoints

    def on_model_upload(self, msg: DmpModelUpload) -> list[WireMessage]:
        try:
            model = dmp.model_from_json(msg.payload.decode())
        except (ValueError, UnicodeDecodeError) as exc:
            return [_nack(ErrorCode.BAD_MESSAGE, f"bad model payload: {exc}")]
        if not model.object_id:
            return [_nack(ErrorCode.BAD_MESSAGE, "model payload lacks an object id")]
        self.dmp_store[model.object_id] = model
        self._emit_event({"event": "model_stored", "object_id": model.object_id})
        return [Ack(ref_frame=self.last_applied_frame)]

    # --- scene and admin ---

    def scene_snapshot(self) -> SceneSnapshot:
        return SceneSnapshot(objects=tuple(self.scene))

    def add_object(self, obj: SceneObject) -> SceneSnapshot:
        if any(o.id == obj.id for o in self.scene):
            raise planner.SceneError(f"duplicate object id {obj.id!r}")
        self.scene.append(obj)
        self._emit_event({"event": "scene_change", "object_id": obj.id})
        return self.scene_snapshot()

    def release_steering(self):
        """Admin: end a steering session without teaching."""
        if self.mode == HostMode.STEERING:
            self._set_mode(HostMode.IDLE)

    def connect_messages(self) -> list[WireMessage]:
        """Messages pushed to a freshly connected operator."""
        return [self.scene_snapshot(), self._next_joint_state()]


class _OutboundQueue:
    """Bounded telemetry buffer: JointState may be dropped oldest-first,
    protocol replies are never dropped."""

    def __init__(self, telemetry_limit: int):
        self._limit = telemetry_limit
        self._items: list[WireMessage] = []
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._closed = False

    def put(self, msg: WireMessage):
        with self._ready:
            if isinstance(msg, JointState):
                telemetry = [i for i, m in enumerate(self._items) if isinstance(m, JointState)]
                if len(telemetry) >= self._limit:
                    del self._items[telemetry[0]]
            self._items.append(msg)
            self._ready.notify()

    def get(self, timeout: float = 0.2) -> WireMessage | None:
        with self._ready:
            if not self._items:
                self._ready.wait(timeout)
            if self._items:
                return self._items.pop(0)
            return None

    def close(self):
        with self._ready:
            self._closed = True
            self._ready.notify_all()

    @property
    def closed(self):
        return self._closed


class HostServer:
    """TCP wrapper: ordered inbound queue feeding the single control loop."""

    def __init__(self, host: RobotHost, listen: tuple[str, int] = ("127.0.0.1", 0)):
        self.host = host
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(listen)
        self._sock.listen(1)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def start(self):
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def serve_forever(self):
        self._accept_loop()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            try:
                self._serve_client(conn)
            finally:
                try:
                    conn.close()
                except OSError:
                    pass

    def _serve_client(self, conn: socket.socket):
        inbound: queue.Queue = queue.Queue()
        outbound = _OutboundQueue(self.host.config.telemetry_buffer)
        done = threading.Event()

        def reader():
            decoder = StreamDecoder()
            try:
                while not done.is_set():
                    data = conn.recv(65536)
                    if not data:
                        break
                    for msg in decoder.feed(data):
                        inbound.put(msg)
            except (OSError, protocol.ProtocolError):
                pass
            finally:
                inbound.put(None)

        def writer():
            try:
                while not done.is_set():
                    msg = outbound.get(timeout=0.2)
                    if msg is None:
                        continue
                    conn.sendall(encode(msg))
            except OSError:
                pass

        threads = [threading.Thread(target=reader, daemon=True), threading.Thread(target=writer, daemon=True)]
        for t in threads:
            t.start()
        for msg in self.host.connect_messages():
            outbound.put(msg)
        try:
            while not self._stop.is_set():
                try:
                    msg = inbound.get(timeout=0.2)
                except queue.Empty:
                    continue
                if msg is None:
                    break
                for reply in self.host.handle(msg):
                    outbound.put(reply)
        finally:
            done.set()
            outbound.close()
            for t in threads:
                t.join(timeout=1.0)


def make_event_log_writer(path):
    """Returns an event sink that appends one JSON line per event."""
    f = open(path, "a")

    def sink(event: dict):
        f.write(json.dumps(event) + "\n")
        f.flush()

    return sink
