"""Dynamic Movement Primitives: fit from demonstrations, roll out to new goals.

Second-order transformation system per degree of freedom,
    tau * z' = alpha_z * (beta_z * (g - y) - z) + f(x)
    tau * y' = z
driven by an exponential canonical phase x(t) = exp(-alpha_x * t / tau).
The forcing term f is a normalized weighted sum of Gaussian basis functions
scaled by the phase and the movement amplitude, so a new goal reshapes the
same motion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

DEFAULT_ALPHA_Z = 25.0
DEFAULT_N_BASIS = 20
SETTLING_FACTOR = 1.5         # rollout runs this multiple of tau
AMPLITUDE_EPS = 1e-8          # |g - y0| below this counts as a degenerate goal
FORCING_DENOM_EPS = 1e-10     # basis activation underflow guard near x -> 0
STORE_SCHEMA_VERSION = 1


class ParameterError(ValueError):
    """Invalid argument to a DMP operation."""


class InsufficientDataError(ValueError):
    """Demonstration too short to fit."""


class DataError(ValueError):
    """Demonstration contains non-finite samples."""


class FitError(RuntimeError):
    """Weight fitting produced non-finite parameters."""


class DmpSpace(Enum):
    JOINT = "joint"
    CARTESIAN = "cartesian"


@dataclass
class DmpDof:
    """Forcing-term parameters and endpoints for one degree of freedom."""

    weights: np.ndarray   # (N,)
    centers: np.ndarray   # (N,), strictly decreasing in (0, 1]
    widths: np.ndarray    # (N,), > 0
    y0: float
    g: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        n = len(self.weights)
        if n < 2 or len(self.centers) != n or len(self.widths) != n:
            raise ParameterError("need >= 2 basis functions with matching centers/widths")
        if np.any(self.widths <= 0):
            raise ParameterError("basis widths must be positive")
        if np.any(np.diff(self.centers) >= 0) or self.centers[0] > 1.0 or self.centers[-1] <= 0.0:
            raise ParameterError("centers must be strictly decreasing within (0, 1]")
        if not np.all(np.isfinite(self.weights)):
            raise FitError("weights must be finite")


@dataclass
class DmpModel:
    """A learned movement: per-DOF forcing parameters plus shared gains."""

    dofs: list[DmpDof]
    tau: float
    alpha_z: float
    beta_z: float
    alpha_x: float
    dt: float
    space: DmpSpace = DmpSpace.JOINT
    object_id: str | None = None

    def __post_init__(self):
        if self.tau <= 0 or self.dt <= 0:
            raise ParameterError("tau and dt must be positive")
        if self.alpha_z <= 0 or self.beta_z <= 0 or self.alpha_x <= 0:
            raise ParameterError("gains must be positive")
        if not self.dofs:
            raise ParameterError("model needs at least one DOF")

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def y0(self) -> np.ndarray:
        return np.array([d.y0 for d in self.dofs])

    @property
    def g(self) -> np.ndarray:
        return np.array([d.g for d in self.dofs])


@dataclass(frozen=True)
class Demonstration:
    """Uniformly sampled positions, shape (T, D), T >= 3."""

    positions: np.ndarray
    dt: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] < 3:
            raise InsufficientDataError("demonstration needs at least 3 samples")
        if not np.all(np.isfinite(pos)):
            raise DataError("demonstration contains non-finite samples")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        object.__setattr__(self, "positions", pos)


def canonical_phase(t, tau: float, alpha_x: float):
    """Phase x = exp(-alpha_x * t / tau); x(0) = 1, strictly decreasing."""
    if tau <= 0 or alpha_x <= 0:
        raise ParameterError("tau and alpha_x must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("t must be non-negative")
    x = np.exp(-alpha_x * t / tau)
    return float(x) if x.ndim == 0 else x


def default_centers_widths(n_basis: int, alpha_x: float) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially spaced centers over the phase range with matched widths."""
    i = np.arange(n_basis)
    centers = np.exp(-alpha_x * i / (n_basis - 1))
    diffs = np.diff(centers)
    widths = np.empty(n_basis)
    widths[:-1] = 1.0 / diffs**2
    widths[-1] = widths[-2]
    return centers, widths


def _basis_activations(dof: DmpDof, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.exp(-dof.widths[None, :] * (x[:, None] - dof.centers[None, :]) ** 2)


def forcing_term(dof: DmpDof, x, scale: float):
    """Phase-gated normalized basis combination, x * scale * sum(psi*w)/sum(psi).

    Returns 0 where the activation sum underflows (phase far past the
    last basis center).
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr <= 0) or np.any(x_arr > 1):
        raise ParameterError("phase must lie in (0, 1]")
    psi = _basis_activations(dof, x_arr)
    denom = psi.sum(axis=1)
    num = psi @ dof.weights
    out = np.where(denom < FORCING_DENOM_EPS, 0.0, x_arr * scale * num / np.where(denom < FORCING_DENOM_EPS, 1.0, denom))
    return float(out[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else out


def _amplitude(y0: float, g: float) -> float:
    # Unit scale for degenerate goals keeps the fit well-conditioned without
    # silencing the forcing term entirely (a demo may return to its start).
    d = g - y0
    return d if abs(d) >= AMPLITUDE_EPS else 1.0


def _rollout_scale(dof: DmpDof, y0_new: float, g_new: float) -> float:
    # A degenerate rollout goal means "stay put" for a point-to-point model,
    # but "replay the shape" for a model that was trained on a return-to-
    # start demo (whose weights are in absolute units).
    d = g_new - y0_new
    if abs(d) >= AMPLITUDE_EPS:
        return d
    trained_degenerate = abs(dof.g - dof.y0) < AMPLITUDE_EPS
    return 1.0 if trained_degenerate else 0.0


def minimum_jerk(start, end, duration: float, dt: float) -> np.ndarray:
    """Rest-to-rest minimum-jerk profile between two points, shape (T, D).

    This is the natural time law of a taught straight-line reach: the path
    is spatially straight while velocity and acceleration vanish at both
    ends, which a goal-attractor system can reproduce faithfully.
    """
    if duration <= 0 or dt <= 0:
        raise ParameterError("duration and dt must be positive")
    start = np.atleast_1d(np.asarray(start, dtype=float))
    end = np.atleast_1d(np.asarray(end, dtype=float))
    n = int(round(duration / dt)) + 1
    s = np.linspace(0.0, 1.0, n)
    blend = 10 * s**3 - 15 * s**4 + 6 * s**5
    return start[None, :] + blend[:, None] * (end - start)[None, :]


def fit(
    demo: Demonstration,
    n_basis: int = DEFAULT_N_BASIS,
    alpha_z: float = DEFAULT_ALPHA_Z,
    beta_z: float | None = None,
    alpha_x: float | None = None,
    space: DmpSpace = DmpSpace.JOINT,
    object_id: str | None = None,
) -> DmpModel:
    """Fit one DMP per demonstrated degree of freedom.

    Velocities and accelerations come from finite differences of the demo
    (central in the interior, one-sided at the ends); the residual forcing
    needed to reproduce them is regressed onto the phase-gated, normalized
    basis design with a small ridge term.
    """
    if n_basis < 2:
        raise ParameterError("need at least 2 basis functions")
    beta_z = alpha_z / 4.0 if beta_z is None else beta_z
    alpha_x = alpha_z / 3.0 if alpha_x is None else alpha_x

    y = demo.positions
    T, D = y.shape
    dt = demo.dt
    tau = (T - 1) * dt

    t = np.arange(T) * dt
    x = canonical_phase(t, tau, alpha_x)
    centers, widths = default_centers_widths(n_basis, alpha_x)
    psi = np.exp(-widths[None, :] * (x[:, None] - centers[None, :]) ** 2)  # (T, N)
    # dimensionless design matrix: normalized activations gated by the phase
    design = psi / psi.sum(axis=1, keepdims=True) * x[:, None]
    gram = design.T @ design + 1e-8 * np.eye(n_basis)

    dy = np.gradient(y, dt, axis=0)
    ddy = np.gradient(dy, dt, axis=0)

    dofs = []
    for d in range(D):
        y0 = float(y[0, d])
        g = float(y[-1, d])
        scale = _amplitude(y0, g)
        # tau*z' = tau^2*y'' ; z = tau*y'
        f_target = tau**2 * ddy[:, d] - alpha_z * (beta_z * (g - y[:, d]) - tau * dy[:, d])
        weights = np.linalg.solve(gram, design.T @ (f_target / scale))
        if not np.all(np.isfinite(weights)):
            raise FitError(f"non-finite weights for DOF {d}")
        dofs.append(DmpDof(weights=weights, centers=centers.copy(), widths=widths.copy(), y0=y0, g=g))

    return DmpModel(
        dofs=dofs,
        tau=tau,
        alpha_z=alpha_z,
        beta_z=beta_z,
        alpha_x=alpha_x,
        dt=dt,
        space=space,
        object_id=object_id,
    )


def rollout(
    model: DmpModel,
    y0_new=None,
    g_new=None,
    tau_new: float | None = None,
    dt: float | None = None,
) -> np.ndarray:
    """Integrate the system toward a (possibly new) goal, shape (T', D).

    Explicit Euler at the given dt for 1.5x the movement duration, so the
    attractor has settled by the final sample.  The initial state is chosen
    with zero acceleration, which recovers the demonstration's launch
    velocity from the stored forcing term alone.  The forcing is evaluated
    only inside the trained phase support (x >= smallest basis center);
    past it the goal attractor takes over.
    """
    D = model.n_dofs
    y0 = model.y0 if y0_new is None else np.asarray(y0_new, dtype=float)
    g = model.g if g_new is None else np.asarray(g_new, dtype=float)
    tau = model.tau if tau_new is None else float(tau_new)
    dt = model.dt if dt is None else float(dt)
    if y0.shape != (D,) or g.shape != (D,):
        raise ParameterError(f"y0/g must have shape ({D},)")
    if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(g)) and np.isfinite(tau) and np.isfinite(dt)):
        raise ParameterError("rollout inputs must be finite")
    if tau <= 0 or dt <= 0:
        raise ParameterError("tau and dt must be positive")

    scales = np.array([_rollout_scale(model.dofs[d], y0[d], g[d]) for d in range(D)])
    supports = np.array([dof.centers[-1] for dof in model.dofs])
    n_steps = math.ceil(SETTLING_FACTOR * tau / dt)
    out = np.empty((n_steps + 1, D))
    y = y0.copy()
    # zero-acceleration start: tau*z' = 0 at t=0 determines z(0)
    z = np.array(
        [
            model.beta_z * (g[d] - y0[d]) + forcing_term(model.dofs[d], 1.0, scales[d]) / model.alpha_z
            for d in range(D)
        ]
    )
    out[0] = y
    for k in range(n_steps):
        x = math.exp(-model.alpha_x * (k * dt) / tau)
        f = np.array(
            [
                forcing_term(model.dofs[d], min(x, 1.0), scales[d]) if x >= supports[d] else 0.0
                for d in range(D)
            ]
        )
        dz = (model.alpha_z * (model.beta_z * (g - y) - z) + f) / tau
        dy = z / tau
        y = y + dt * dy
        z = z + dt * dz
        out[k + 1] = y
    return out


# --- store document serialization (used by the operator gateway) ---

def model_to_doc(model: DmpModel) -> dict:
    return {
        "schema_version": STORE_SCHEMA_VERSION,
        "space": model.space.value,
        "tau": model.tau,
        "dt": model.dt,
        "gains": {"alpha_z": model.alpha_z, "beta_z": model.beta_z, "alpha_x": model.alpha_x},
        "dofs": [
            {
                "weights": d.weights.tolist(),
                "centers": d.centers.tolist(),
                "widths": d.widths.tolist(),
                "y0": d.y0,
                "g": d.g,
            }
            for d in model.dofs
        ],
        "object_id": model.object_id,
    }


def model_from_doc(doc: dict) -> DmpModel:
    if doc.get("schema_version") != STORE_SCHEMA_VERSION:
        raise ParameterError(f"unsupported model schema version {doc.get('schema_version')!r}")
    gains = doc["gains"]
    return DmpModel(
        dofs=[
            DmpDof(
                weights=np.array(d["weights"]),
                centers=np.array(d["centers"]),
                widths=np.array(d["widths"]),
                y0=float(d["y0"]),
                g=float(d["g"]),
            )
            for d in doc["dofs"]
        ],
        tau=float(doc["tau"]),
        alpha_z=float(gains["alpha_z"]),
        beta_z=float(gains["beta_z"]),
        alpha_x=float(gains["alpha_x"]),
        dt=float(doc["dt"]),
        space=DmpSpace(doc["space"]),
        object_id=doc.get("object_id"),
    )


def model_to_json(model: DmpModel) -> str:
    return json.dumps(model_to_doc(model))


def model_from_json(text: str) -> DmpModel:
    return model_from_doc(json.loads(text))
