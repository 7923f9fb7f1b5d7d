"""Axis-wise affine calibration between a hand tracker and a reference system.

Each axis gets an independent ordinary least squares fit
reference = scale * tracker + offset, plus MAD / MAPE accuracy metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAPE_REFERENCE_EPS = 1e-6  # m; references below this are excluded, not errors
AXES = ("x", "y", "z")


class ParameterError(ValueError):
    """Invalid argument to a calibration operation."""


class FitError(ValueError):
    """Regression input is degenerate (zero-variance tracker column)."""


@dataclass(frozen=True)
class AxisRegression:
    scale: float
    offset: float
    r_squared: float


@dataclass(frozen=True)
class CalibrationModel:
    x: AxisRegression
    y: AxisRegression
    z: AxisRegression

    def axis(self, index: int) -> AxisRegression:
        return (self.x, self.y, self.z)[index]


@dataclass(frozen=True)
class PairedSamples:
    """Simultaneously collected tracker and reference positions, (K, 3) each."""

    tracker: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.tracker, dtype=float)
        ref = np.asarray(self.reference, dtype=float)
        if tr.shape != ref.shape or tr.ndim != 2 or tr.shape[1] != 3:
            raise ParameterError("tracker and reference must both be (K, 3)")
        if tr.shape[0] < 2:
            raise ParameterError("need at least 2 paired samples")
        if not (np.all(np.isfinite(tr)) and np.all(np.isfinite(ref))):
            raise ParameterError("paired samples must be finite")
        object.__setattr__(self, "tracker", tr)
        object.__setattr__(self, "reference", ref)


def fit_axis(tracker, reference) -> AxisRegression:
    """OLS fit of reference on tracker for a single axis."""
    t = np.asarray(tracker, dtype=float)
    r = np.asarray(reference, dtype=float)
    if t.shape != r.shape or t.ndim != 1 or len(t) < 2:
        raise ParameterError("need two equal-length 1-D arrays of >= 2 samples")
    t_mean, r_mean = t.mean(), r.mean()
    t_centered = t - t_mean
    ss_t = float(t_centered @ t_centered)
    # threshold absorbs rounding of the mean on genuinely constant columns
    if ss_t <= len(t) * (1e-12 * max(1.0, abs(t_mean))) ** 2:
        raise FitError("tracker column has zero variance")
    scale = float(t_centered @ (r - r_mean)) / ss_t
    offset = float(r_mean - scale * t_mean)
    residuals = r - (scale * t + offset)
    ss_res = float(residuals @ residuals)
    ss_tot = float(np.sum((r - r_mean) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return AxisRegression(scale=scale, offset=offset, r_squared=min(max(r_squared, 0.0), 1.0))


def fit_calibration(samples: PairedSamples) -> CalibrationModel:
    axes = [fit_axis(samples.tracker[:, i], samples.reference[:, i]) for i in range(3)]
    return CalibrationModel(x=axes[0], y=axes[1], z=axes[2])


def apply(model: CalibrationModel, p) -> np.ndarray:
    """Per-axis affine map of a point or an (N, 3) array of points."""
    p = np.asarray(p, dtype=float)
    scales = np.array([model.axis(i).scale for i in range(3)])
    offsets = np.array([model.axis(i).offset for i in range(3)])
    return p * scales + offsets


def identity_calibration() -> CalibrationModel:
    unit = AxisRegression(scale=1.0, offset=0.0, r_squared=1.0)
    return CalibrationModel(x=unit, y=unit, z=unit)


def mad(errors) -> float:
    """Mean absolute deviation of an error series."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ParameterError("mad needs at least one error sample")
    return float(np.mean(np.abs(e)))


@dataclass(frozen=True)
class MapeResult:
    percent: float
    excluded: int          # samples skipped for near-zero reference magnitude


def mape(predicted, reference, eps: float = MAPE_REFERENCE_EPS) -> MapeResult:
    """Mean absolute percentage error, excluding near-zero references."""
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape or p.size == 0:
        raise ParameterError("predicted and reference must be equal-length, non-empty")
    keep = np.abs(r) > eps
    excluded = int(np.sum(~keep))
    if not np.any(keep):
        raise ParameterError("all reference samples below the magnitude threshold")
    value = float(100.0 * np.mean(np.abs(p[keep] - r[keep]) / np.abs(r[keep])))
    return MapeResult(percent=value, excluded=excluded)


# --- file I/O ---

def load_paired_csv(path: str | Path) -> PairedSamples:
    """Read paired samples from a CSV with header tx,ty,tz,rx,ry,rz (meters)."""
    with open(path) as f:
        reader = csv.reader(f)
        header = next(reader)
        if [h.strip() for h in header] != ["tx", "ty", "tz", "rx", "ry", "rz"]:
            raise ParameterError("paired CSV must have header tx,ty,tz,rx,ry,rz")
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    return PairedSamples(tracker=data[:, :3], reference=data[:, 3:])


def save_calibration(model: CalibrationModel, path: str | Path) -> None:
    doc = {
        "schema_version": 1,
        "axes": {
            name: {"scale": ax.scale, "offset": ax.offset, "r_squared": ax.r_squared}
            for name, ax in zip(AXES, (model.x, model.y, model.z))
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def load_calibration(path: str | Path) -> CalibrationModel:
    with open(path) as f:
        doc = json.load(f)
    axes = {
        name: AxisRegression(
            scale=float(d["scale"]), offset=float(d["offset"]), r_squared=float(d["r_squared"])
        )
        for name, d in doc["axes"].items()
    }
    return CalibrationModel(x=axes["x"], y=axes["y"], z=axes["z"])
