"""Kinematic model and motion simulator of a 6-DOF serial arm.

Forward kinematics over a Denavit-Hartenberg table, incremental damped
least squares inverse kinematics for hand-delta tracking, and
velocity-limited trajectory execution.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

N_JOINTS = 6

# DLS / IK tuning
DLS_DAMPING = 0.05
JACOBIAN_STEP = 1e-6
IK_TOLERANCE = 1e-4           # m, per-step convergence target
IK_FAIL_RESIDUAL = 1e-3       # m, above this after the budget -> unreachable
IK_MAX_ITERATIONS = 50
DEFAULT_STEP_CAP = 0.05       # m, per-step Cartesian delta cap


class ParameterError(ValueError):
    """Invalid argument to a kinematics operation."""


class LimitError(ValueError):
    """A joint configuration violates the configured joint limits."""


class UnreachableError(RuntimeError):
    """IK could not bring the end effector close enough to the target."""

    def __init__(self, residual: float, message: str | None = None):
        super().__init__(message or f"target unreachable, residual {residual:.6f} m")
        self.residual = residual


@dataclass(frozen=True)
class DhTable:
    """Standard DH parameters plus joint limits and speed caps for 6 joints."""

    a: np.ndarray             # m, shape (6,)
    d: np.ndarray             # m, shape (6,)
    alpha: np.ndarray         # rad, shape (6,)
    theta_offset: np.ndarray  # rad, shape (6,)
    joint_limits: np.ndarray  # rad, shape (6, 2), lower < upper
    max_joint_speed: np.ndarray  # rad/s, shape (6,), > 0
    home: np.ndarray          # rad, shape (6,)

    def __post_init__(self):
        for name in ("a", "d", "alpha", "theta_offset", "max_joint_speed", "home"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (N_JOINTS,):
                raise ParameterError(f"{name} must have shape ({N_JOINTS},)")
            object.__setattr__(self, name, arr)
        limits = np.asarray(self.joint_limits, dtype=float)
        if limits.shape != (N_JOINTS, 2):
            raise ParameterError("joint_limits must have shape (6, 2)")
        if np.any(limits[:, 0] >= limits[:, 1]):
            raise ParameterError("joint limits must satisfy lower < upper")
        if np.any(self.max_joint_speed <= 0):
            raise ParameterError("max_joint_speed entries must be > 0")
        object.__setattr__(self, "joint_limits", limits)

    def check_limits(self, q: np.ndarray) -> None:
        q = as_joint_vector(q)
        if np.any(q < self.joint_limits[:, 0]) or np.any(q > self.joint_limits[:, 1]):
            raise LimitError(f"joint vector {q.tolist()} outside limits")

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def reach_radius(self) -> float:
        """Upper bound on end-effector distance from the base origin."""
        return float(np.sum(np.abs(self.a)) + np.sum(np.abs(self.d)))


@dataclass(frozen=True)
class CartesianPose:
    """Tool position (m) and orientation as a unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        quat = np.asarray(self.orientation, dtype=float)
        if pos.shape != (3,) or quat.shape != (4,):
            raise ParameterError("pose needs a 3-vector position and 4-vector quaternion")
        if abs(np.linalg.norm(quat) - 1.0) > 1e-9:
            raise ParameterError("orientation quaternion must be unit length")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)


@dataclass
class TrajectoryLog:
    """Timestamped joint samples at a uniform interval, t starting at 0."""

    times: np.ndarray      # s, shape (T,)
    positions: np.ndarray  # rad, shape (T, 6)
    dt: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != N_JOINTS:
            raise ParameterError("positions must have shape (T, 6)")
        if self.times.shape != (self.positions.shape[0],):
            raise ParameterError("times and positions lengths differ")
        if len(self.times) == 0:
            raise ParameterError("trajectory log needs at least one sample")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if len(self.times) > 1:
            gaps = np.diff(self.times)
            if np.any(gaps <= 0) or np.any(np.abs(gaps - self.dt) > 1e-9):
                raise ParameterError("times must increase uniformly by dt")

    def __len__(self) -> int:
        return len(self.times)


def as_joint_vector(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ParameterError(f"joint vector must have shape ({N_JOINTS},)")
    if not np.all(np.isfinite(q)):
        raise ParameterError("joint vector must be finite")
    return q


def dh_transform(a: float, d: float, alpha: float, theta: float) -> np.ndarray:
    """Single-link homogeneous transform for standard DH parameters."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _chain(q: np.ndarray, dh: DhTable) -> np.ndarray:
    T = np.eye(4)
    theta = q + dh.theta_offset
    for i in range(N_JOINTS):
        T = T @ dh_transform(dh.a[i], dh.d[i], dh.alpha[i], theta[i])
    return T


def link_origins(q, dh: DhTable) -> np.ndarray:
    """Origins of the base frame and all 6 link frames, shape (7, 3)."""
    q = as_joint_vector(q)
    theta = q + dh.theta_offset
    origins = np.zeros((N_JOINTS + 1, 3))
    T = np.eye(4)
    for i in range(N_JOINTS):
        T = T @ dh_transform(dh.a[i], dh.d[i], dh.alpha[i], theta[i])
        origins[i + 1] = T[:3, 3]
    return origins


def _quaternion_from_matrix(R: np.ndarray) -> np.ndarray:
    # Shepperd's method; sign fixed so the scalar part is non-negative.
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def forward_kinematics(q, dh: DhTable) -> CartesianPose:
    """Pose of the tool frame for joint vector q."""
    q = as_joint_vector(q)
    T = _chain(q, dh)
    return CartesianPose(position=T[:3, 3].copy(), orientation=_quaternion_from_matrix(T[:3, :3]))


def tool_position(q: np.ndarray, dh: DhTable) -> np.ndarray:
    """Tool position only; cheaper form used by the Jacobian and planner."""
    return _chain(q, dh)[:3, 3].copy()


def position_jacobian(q: np.ndarray, dh: DhTable) -> np.ndarray:
    """3x6 positional Jacobian by central finite differences."""
    J = np.zeros((3, N_JOINTS))
    for j in range(N_JOINTS):
        dq = np.zeros(N_JOINTS)
        dq[j] = JACOBIAN_STEP
        J[:, j] = (tool_position(q + dq, dh) - tool_position(q - dq, dh)) / (2 * JACOBIAN_STEP)
    return J


def ik_step(
    q_current,
    cartesian_delta,
    dh: DhTable,
    step_cap: float = DEFAULT_STEP_CAP,
) -> np.ndarray:
    """Joint vector whose tool position is the current one shifted by delta.

    Damped least squares iterations on the positional Jacobian; joints are
    clamped to their limits every iteration.  Raises UnreachableError with
    the remaining residual when the budget runs out far from the target.
    """
    q = as_joint_vector(q_current)
    delta = np.asarray(cartesian_delta, dtype=float)
    if delta.shape != (3,) or not np.all(np.isfinite(delta)):
        raise ParameterError("cartesian delta must be a finite 3-vector")
    if np.linalg.norm(delta) > step_cap + 1e-12:
        raise ParameterError(f"|delta| exceeds the per-step cap of {step_cap} m")

    target = tool_position(q, dh) + delta
    residual = np.linalg.norm(target - tool_position(q, dh))
    for _ in range(IK_MAX_ITERATIONS):
        if residual < IK_TOLERANCE:
            return q
        err = target - tool_position(q, dh)
        J = position_jacobian(q, dh)
        A = J @ J.T + (DLS_DAMPING**2) * np.eye(3)
        dq = J.T @ np.linalg.solve(A, err)
        q = dh.clamp(q + dq)
        residual = np.linalg.norm(target - tool_position(q, dh))
    if residual > IK_FAIL_RESIDUAL:
        raise UnreachableError(residual)
    return q


def execute(q_path, dh: DhTable, dt: float) -> TrajectoryLog:
    """Time-parameterize a waypoint path under per-joint speed caps.

    Each segment runs at the duration its slowest joint needs; the resulting
    piecewise-linear motion is resampled on a uniform dt grid.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    waypoints = [as_joint_vector(w) for w in q_path]
    if not waypoints:
        raise ParameterError("path needs at least one waypoint")
    for w in waypoints:
        dh.check_limits(w)

    knots_t = [0.0]
    knots_q = [waypoints[0]]
    for prev, cur in zip(waypoints, waypoints[1:]):
        duration = float(np.max(np.abs(cur - prev) / dh.max_joint_speed))
        if duration <= 0:
            continue  # duplicate waypoint
        knots_t.append(knots_t[-1] + duration)
        knots_q.append(cur)

    total = knots_t[-1]
    if total == 0.0:
        return TrajectoryLog(times=np.zeros(1), positions=waypoints[0][None, :], dt=dt)

    n_steps = math.ceil(total / dt)
    times = np.arange(n_steps + 1) * dt
    knots_t_arr = np.array(knots_t)
    knots_q_arr = np.vstack(knots_q)
    positions = np.column_stack(
        [np.interp(np.minimum(times, total), knots_t_arr, knots_q_arr[:, j]) for j in range(N_JOINTS)]
    )
    return TrajectoryLog(times=times, positions=positions, dt=dt)


def path_length(poses) -> float:
    """Total Euclidean distance along consecutive positions.

    Accepts a sequence of CartesianPose or an (N, 3) position array.
    """
    if isinstance(poses, np.ndarray):
        pts = np.asarray(poses, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ParameterError("position array must have shape (N, 3)")
    else:
        poses = list(poses)
        if not poses:
            raise ParameterError("path_length needs at least one pose")
        pts = np.vstack([p.position for p in poses])
    if pts.shape[0] == 0:
        raise ParameterError("path_length needs at least one pose")
    if pts.shape[0] == 1:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


# --- configuration and trajectory I/O ---

def load_dh_table(path: str | Path) -> DhTable:
    """Load a kinematics configuration file (JSON)."""
    with open(path) as f:
        doc = json.load(f)
    return _table_from_doc(doc)


def _table_from_doc(doc: dict) -> DhTable:
    rows = doc["dh"]
    if len(rows) != N_JOINTS:
        raise ParameterError("kinematics config must define 6 DH rows")
    return DhTable(
        a=np.array([r["a"] for r in rows]),
        d=np.array([r["d"] for r in rows]),
        alpha=np.array([r["alpha"] for r in rows]),
        theta_offset=np.array([r["theta_offset"] for r in rows]),
        joint_limits=np.array(doc["joint_limits"]),
        max_joint_speed=np.array(doc["max_joint_speed"]),
        home=np.array(doc["home"]),
    )


def table_to_doc(dh: DhTable) -> dict:
    return {
        "schema_version": 1,
        "dh": [
            {
                "a": float(dh.a[i]),
                "d": float(dh.d[i]),
                "alpha": float(dh.alpha[i]),
                "theta_offset": float(dh.theta_offset[i]),
            }
            for i in range(N_JOINTS)
        ],
        "joint_limits": dh.joint_limits.tolist(),
        "max_joint_speed": dh.max_joint_speed.tolist(),
        "home": dh.home.tolist(),
    }


def default_table() -> DhTable:
    """The shipped UR10-class configuration."""
    ref = resources.files("telearm.config").joinpath("ur10.json")
    return _table_from_doc(json.loads(ref.read_text()))


def save_trajectory_csv(log: TrajectoryLog, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "q1", "q2", "q3", "q4", "q5", "q6"])
        for t, q in zip(log.times, log.positions):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in q])


def load_trajectory_csv(path: str | Path) -> TrajectoryLog:
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:1] != ["t"]:
            raise ParameterError("trajectory CSV must start with a 't' column")
        rows = [[float(v) for v in row] for row in reader]
    times = np.array([r[0] for r in rows])
    positions = np.array([r[1:7] for r in rows])
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    return TrajectoryLog(times=times, positions=positions, dt=dt)
