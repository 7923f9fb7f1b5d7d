"""Joint-space RRT-Connect planner with link-segment collision checking.

Links are modeled as line segments between consecutive DH frame origins;
scene objects are spheres and axis-aligned boxes.  Planning is fully
deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import DhTable, as_joint_vector, link_origins

DEFAULT_STEP_SIZE = 0.1       # rad, per-joint cap on a single path step
DEFAULT_MAX_ITERATIONS = 20_000
DEFAULT_SAFETY_MARGIN = 0.02  # m, required clearance between links and objects
EDGE_CHECK_DIVISIONS = 4      # collision samples per step along an edge
MAX_OBJECT_ID_BYTES = 12      # keeps a 64-object snapshot inside the wire budget


class SceneError(ValueError):
    """Malformed scene object or scene file."""


class NoPathError(RuntimeError):
    """The planner exhausted its iteration budget."""


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise SceneError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 3 or any(v <= 0 for v in he):
            raise SceneError("box half extents must be three positive numbers")
        object.__setattr__(self, "half_extents", he)


@dataclass(frozen=True)
class SceneObject:
    id: str
    centroid: tuple[float, float, float]
    shape: Sphere | Box

    def __post_init__(self):
        if not self.id or len(self.id.encode()) > MAX_OBJECT_ID_BYTES:
            raise SceneError(f"object id must be 1..{MAX_OBJECT_ID_BYTES} bytes")
        c = tuple(float(v) for v in self.centroid)
        if len(c) != 3 or not all(math.isfinite(v) for v in c):
            raise SceneError("centroid must be a finite 3-vector")
        object.__setattr__(self, "centroid", c)


@dataclass
class PlanRequest:
    q_start: np.ndarray
    q_goal: np.ndarray
    scene: list[SceneObject] = field(default_factory=list)
    step_size: float = DEFAULT_STEP_SIZE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    rng_seed: int = 0

    def __post_init__(self):
        self.q_start = as_joint_vector(self.q_start)
        self.q_goal = as_joint_vector(self.q_goal)
        if self.step_size <= 0:
            raise SceneError("step_size must be positive")


def _segment_point_distance(p0: np.ndarray, p1: np.ndarray, point: np.ndarray) -> float:
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        return float(np.linalg.norm(point - p0))
    t = float(np.clip((point - p0) @ d / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (p0 + t * d)))


def _point_box_distance(point: np.ndarray, centroid: np.ndarray, half: np.ndarray) -> float:
    outside = np.maximum(np.abs(point - centroid) - half, 0.0)
    return float(np.linalg.norm(outside))


def _segment_box_distance(p0: np.ndarray, p1: np.ndarray, centroid: np.ndarray, half: np.ndarray) -> float:
    # Point-to-box distance is convex along the segment, so a ternary search
    # over the interpolation parameter converges to the minimum.
    lo, hi = 0.0, 1.0
    d = p1 - p0
    for _ in range(48):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if _point_box_distance(p0 + m1 * d, centroid, half) <= _point_box_distance(p0 + m2 * d, centroid, half):
            hi = m2
        else:
            lo = m1
    mid = (lo + hi) / 2.0
    return _point_box_distance(p0 + mid * d, centroid, half)


def _object_clearance(p0: np.ndarray, p1: np.ndarray, obj: SceneObject) -> float:
    centroid = np.asarray(obj.centroid)
    if isinstance(obj.shape, Sphere):
        return _segment_point_distance(p0, p1, centroid) - obj.shape.radius
    return _segment_box_distance(p0, p1, centroid, np.asarray(obj.shape.half_extents))


def collision_free(
    q,
    scene: list[SceneObject],
    dh: DhTable,
    margin: float = DEFAULT_SAFETY_MARGIN,
) -> bool:
    """True iff every link segment keeps at least `margin` clearance."""
    if not scene:
        return True
    origins = link_origins(q, dh)
    for obj in scene:
        for i in range(len(origins) - 1):
            if _object_clearance(origins[i], origins[i + 1], obj) < margin:
                return False
    return True


def _interpolate(q_from: np.ndarray, q_to: np.ndarray, max_step: float) -> np.ndarray:
    """Configurations from q_from to q_to inclusive, per-joint steps <= max_step."""
    span = float(np.max(np.abs(q_to - q_from)))
    n = max(1, math.ceil(span / max_step))
    return q_from[None, :] + np.linspace(0.0, 1.0, n + 1)[:, None] * (q_to - q_from)[None, :]


def _edge_free(q_from, q_to, scene, dh, step_size, margin) -> bool:
    for q in _interpolate(q_from, q_to, step_size / EDGE_CHECK_DIVISIONS):
        if not collision_free(q, scene, dh, margin):
            return False
    return True


class _Tree:
    def __init__(self, root: np.ndarray):
        self.nodes = [root]
        self.parents = [-1]

    def nearest(self, q: np.ndarray) -> int:
        arr = np.vstack(self.nodes)
        return int(np.argmin(np.sum((arr - q[None, :]) ** 2, axis=1)))

    def add(self, q: np.ndarray, parent: int) -> int:
        self.nodes.append(q)
        self.parents.append(parent)
        return len(self.nodes) - 1

    def path_to_root(self, index: int) -> list[np.ndarray]:
        out = []
        while index != -1:
            out.append(self.nodes[index])
            index = self.parents[index]
        return out


_TRAPPED, _ADVANCED, _REACHED = 0, 1, 2


def plan(req: PlanRequest, dh: DhTable, margin: float = DEFAULT_SAFETY_MARGIN, smooth: bool = False) -> list[np.ndarray]:
    """Bidirectional RRT-Connect between two collision-free configurations.

    The returned path starts at q_start, ends at q_goal, moves at most
    step_size per joint per step, and is collision-free at quarter-step
    validation resolution.  No smoothing unless explicitly requested.
    """
    dh.check_limits(req.q_start)
    dh.check_limits(req.q_goal)
    if not collision_free(req.q_start, req.scene, dh, margin):
        raise SceneError("q_start is in collision")
    if not collision_free(req.q_goal, req.scene, dh, margin):
        raise SceneError("q_goal is in collision")

    if np.array_equal(req.q_start, req.q_goal):
        return [req.q_start.copy()]

    rng = np.random.default_rng(req.rng_seed)
    step = req.step_size
    lo, hi = dh.joint_limits[:, 0], dh.joint_limits[:, 1]

    tree_a, tree_b = _Tree(req.q_start.copy()), _Tree(req.q_goal.copy())
    a_is_start = True

    def extend(tree: _Tree, target: np.ndarray) -> tuple[int, int]:
        near = tree.nearest(target)
        q_near = tree.nodes[near]
        diff = target - q_near
        span = float(np.max(np.abs(diff)))
        if span <= step:
            q_new = target.copy()
            status = _REACHED
        else:
            q_new = q_near + diff * (step / span)
            status = _ADVANCED
        if not _edge_free(q_near, q_new, req.scene, dh, step, margin):
            return _TRAPPED, -1
        return status, tree.add(q_new, near)

    for _ in range(req.max_iterations):
        q_rand = rng.uniform(lo, hi)
        status, new_index = extend(tree_a, q_rand)
        if status != _TRAPPED:
            target = tree_a.nodes[new_index]
            while True:
                status_b, b_index = extend(tree_b, target)
                if status_b != _ADVANCED:
                    break
            if status_b == _REACHED:
                part_a = tree_a.path_to_root(new_index)[::-1]
                part_b = tree_b.path_to_root(b_index)
                path = part_a + part_b[1:] if np.array_equal(part_b[0], part_a[-1]) else part_a + part_b
                if not a_is_start:
                    path = path[::-1]
                if smooth:
                    path = _shortcut(path, req, dh, margin, rng)
                return [q.copy() for q in path]
        tree_a, tree_b = tree_b, tree_a
        a_is_start = not a_is_start

    raise NoPathError(f"no path after {req.max_iterations} iterations")


def _shortcut(path, req: PlanRequest, dh: DhTable, margin, rng, attempts: int = 100):
    path = list(path)
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.integers(0, len(path), size=2))
        if j - i < 2:
            continue
        if _edge_free(path[i], path[j], req.scene, dh, req.step_size, margin):
            bridge = list(_interpolate(path[i], path[j], req.step_size))
            path = path[: i + 1] + bridge[1:-1] + path[j:]
    return path


def straight_line_plan(
    q_start,
    q_goal,
    scene: list[SceneObject],
    dh: DhTable,
    step_size: float = DEFAULT_STEP_SIZE,
    margin: float = DEFAULT_SAFETY_MARGIN,
) -> list[np.ndarray] | None:
    """Linear joint interpolation, or None when any sample collides."""
    q_start = as_joint_vector(q_start)
    q_goal = as_joint_vector(q_goal)
    samples = _interpolate(q_start, q_goal, step_size)
    for q in samples:
        if not collision_free(q, scene, dh, margin):
            return None
    if np.array_equal(q_start, q_goal):
        return [q_start.copy()]
    return [q.copy() for q in samples]


# --- scene file I/O (same schema as the wire snapshot) ---

def scene_object_to_doc(obj: SceneObject) -> dict:
    if isinstance(obj.shape, Sphere):
        shape = {"kind": "sphere", "radius": obj.shape.radius}
    else:
        shape = {"kind": "box", "half_extents": list(obj.shape.half_extents)}
    return {"id": obj.id, "centroid": list(obj.centroid), "shape": shape}


def scene_object_from_doc(doc: dict) -> SceneObject:
    shape_doc = doc["shape"]
    if shape_doc["kind"] == "sphere":
        shape = Sphere(radius=float(shape_doc["radius"]))
    elif shape_doc["kind"] == "box":
        shape = Box(half_extents=tuple(shape_doc["half_extents"]))
    else:
        raise SceneError(f"unknown shape kind {shape_doc['kind']!r}")
    return SceneObject(id=doc["id"], centroid=tuple(doc["centroid"]), shape=shape)


def load_scene(path: str | Path) -> list[SceneObject]:
    with open(path) as f:
        doc = json.load(f)
    objects = [scene_object_from_doc(d) for d in doc["objects"]]
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids):
        raise SceneError("scene object ids must be unique")
    return objects


def save_scene(objects: list[SceneObject], path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump({"objects": [scene_object_to_doc(o) for o in objects]}, f, indent=2)
