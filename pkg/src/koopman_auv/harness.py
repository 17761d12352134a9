"""Open-loop prediction and closed-loop tracking experiments."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .edmd import LiftedModel, format_float, predict_trajectory
from .mpc import KoopmanMPC
from .plant import PlantParams, rk4_step, simulate

__all__ = [
    "ReferenceSignal",
    "ClosedLoopTrace",
    "PredictionResult",
    "DEFAULT_REFERENCE",
    "square_wave",
    "run_prediction_experiment",
    "run_tracking_experiment",
    "trace_metrics",
    "write_trace_csv",
    "read_trace_csv",
    "write_prediction_csv",
    "write_metrics",
]

DEFAULT_REFERENCE = ((0.0, 0.2), (3.0, 0.5), (6.0, -0.2), (9.0, 0.0))
DEFAULT_DURATION = 12.0


def _n_steps(duration: float, dt: float) -> int:
    steps = round(duration / dt)
    if steps < 0 or not math.isclose(steps * dt, duration, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"duration {duration} is not a non-negative multiple of dt={dt}")
    return steps


@dataclass(frozen=True)
class ReferenceSignal:
    """Piecewise-constant reference, left-closed at each breakpoint."""

    breakpoints: tuple = DEFAULT_REFERENCE

    def __post_init__(self):
        bp = tuple((float(t), float(v)) for t, v in self.breakpoints)
        if not bp or bp[0][0] != 0.0:
            raise ValueError("first breakpoint must be at t = 0")
        times = [t for t, _ in bp]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.breakpoints])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.breakpoints])

    def __call__(self, t):
        # tiny slack so that k*dt lands on the breakpoint it names
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float) + 1e-9, side="right") - 1
        out = self.values[np.clip(idx, 0, None)]
        return out[()] if np.ndim(out) == 0 else out


def square_wave(amplitude: float, period: float, duration: float, dt: float) -> np.ndarray:
    """Samples of a square wave that starts at ``+amplitude`` at t = 0."""
    steps = _n_steps(duration, dt)
    t = np.arange(steps) * dt
    phase = np.floor(t / (0.5 * period) + 1e-9).astype(int)
    return np.where(phase % 2 == 0, amplitude, -amplitude).astype(float)


@dataclass
class PredictionResult:
    t: np.ndarray
    inputs: np.ndarray
    truth: np.ndarray
    prediction: np.ndarray
    rmse: float

    @property
    def truth_rms(self) -> float:
        return float(np.sqrt(np.mean(self.truth**2)))


def run_prediction_experiment(plant: PlantParams, model: LiftedModel, v0: float, input_signal,
                              duration: float, dt: float) -> PredictionResult:
    """Compare the RK4 plant with the lifted predictor under the same inputs."""
    steps = _n_steps(duration, dt)
    inputs = np.asarray(input_signal, dtype=float).ravel()
    if inputs.size < steps:
        raise ValueError(f"input signal has {inputs.size} samples, need {steps}")
    inputs = inputs[:steps]
    truth = simulate(v0, inputs, dt, plant)
    prediction = predict_trajectory(model, v0, inputs)[:, 0]
    rmse = float(np.sqrt(np.mean((truth - prediction) ** 2)))
    return PredictionResult(t=np.round(np.arange(steps + 1) * dt, 12), inputs=inputs, truth=truth,
                            prediction=prediction, rmse=rmse)


@dataclass
class ClosedLoopTrace:
    """Per-step record of a tracking run, sampled every ``dt``."""

    dt: float
    t: list = field(default_factory=list)
    v: list = field(default_factory=list)
    u: list = field(default_factory=list)
    du: list = field(default_factory=list)
    y_r: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    u_bounds: tuple | None = None
    du_bounds: tuple | None = None

    def append(self, t, v, u, du, y_r, cost, flags=""):
        self.t.append(float(t))
        self.v.append(float(v))
        self.u.append(float(u))
        self.du.append(float(du))
        self.y_r.append(float(y_r))
        self.cost.append(float(cost))
        self.flags.append(flags)

    def __len__(self):
        return len(self.t)

    def as_arrays(self) -> dict:
        return {k: np.asarray(getattr(self, k), dtype=float) for k in ("t", "v", "u", "du", "y_r", "cost")}


def run_tracking_experiment(plant: PlantParams, controller: KoopmanMPC, reference: ReferenceSignal,
                            duration: float, dt: float, v0: float = 0.0) -> ClosedLoopTrace:
    """Close the loop between the MPC and the RK4 plant.

    The controller sees the true future reference over its horizon and a
    noiseless speed measurement.
    """
    if controller.model.n != 1 or controller.model.p != 1:
        raise ValueError("tracking experiment drives the scalar surge plant")
    steps = _n_steps(duration, dt)
    cfg = controller.config
    horizon = cfg.horizon
    trace = ClosedLoopTrace(
        dt=dt,
        u_bounds=(float(cfg.u_min[0]), float(cfg.u_max[0])),
        du_bounds=(float(cfg.du_min[0]), float(cfg.du_max[0])),
    )
    q = float(cfg.q_u[0, 0])
    r = float(cfg.r[0, 0])
    v = float(v0)
    for k in range(steps):
        t = round(k * dt, 12)
        window = reference(t + np.arange(horizon + 1) * dt)
        u_before = float(controller.u_prev[0])
        u, info = controller.step(v, window)
        u = float(u[0])
        du = u - u_before
        y = float(window[0])
        flags = []
        if info["state_relaxed"]:
            flags.append("relaxed")
        if info["clamped"]:
            flags.append("clamped")
        if not info["converged"]:
            flags.append("maxiter")
        cost = q * np.square(v - y) + r * np.square(du)
        trace.append(t, v, u, du, y, cost, "|".join(flags))
        v = float(rk4_step(v, u, dt, plant))
        if not (math.isfinite(v) and math.isfinite(cost)):
            raise RuntimeError(f"plant state became non-finite at step {k} (t={t:.4f})")
    return trace


def _segments(trace: ClosedLoopTrace):
    y = np.asarray(trace.y_r)
    starts = [0] + [i for i in range(1, len(y)) if y[i] != y[i - 1]]
    ends = starts[1:] + [len(y)]
    return list(zip(starts, ends))


def trace_metrics(trace: ClosedLoopTrace, u_bounds=None, du_bounds=None, tol: float = 1e-6,
                  settle_band: float = 0.02, steady_fraction: float = 0.1, preview: float = 0.0) -> dict:
    """Summarize a closed-loop trace.

    A segment is a maximal run of constant reference. Its step magnitude
    is the jump from the previous reference (from the initial speed for the
    first segment). Settling time is the first time, relative to the
    segment start, after which ``|v - y_r|`` stays within
    ``settle_band * step``; ``None`` if it never settles. Steady-state error
    is the largest ``|v - y_r|`` over the last ``steady_fraction`` of the
    segment. With reference preview the controller starts moving toward the
    next reference early, so the final ``preview`` seconds of every segment
    except the last are excluded from settling and steady-state checks.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    arr = trace.as_arrays()
    u_bounds = u_bounds if u_bounds is not None else trace.u_bounds
    du_bounds = du_bounds if du_bounds is not None else trace.du_bounds
    violations = 0
    if u_bounds is not None:
        violations += int(np.sum((arr["u"] < u_bounds[0] - tol) | (arr["u"] > u_bounds[1] + tol)))
    if du_bounds is not None:
        violations += int(np.sum((arr["du"] < du_bounds[0] - tol) | (arr["du"] > du_bounds[1] + tol)))

    err = np.abs(arr["v"] - arr["y_r"])
    segments = []
    prev_ref = arr["v"][0]
    segs = _segments(trace)
    cut = int(round(preview / trace.dt))
    for i, (start, end) in enumerate(segs):
        ref = arr["y_r"][start]
        step = abs(ref - prev_ref)
        band = settle_band * step
        stop = end if i == len(segs) - 1 else max(start + 1, end - cut)
        seg_err = err[start:stop]
        outside = np.flatnonzero(seg_err > band)
        if outside.size == 0:
            settle = 0.0
        elif outside[-1] == len(seg_err) - 1:
            settle = None
        else:
            settle = round(float(arr["t"][start + outside[-1] + 1] - arr["t"][start]), 9)
        tail = max(1, int(math.ceil(steady_fraction * len(seg_err))))
        segments.append({
            "evaluated_until": float(arr["t"][stop - 1]),
            "t_start": float(arr["t"][start]),
            "duration": float((end - start) * trace.dt),
            "reference": float(ref),
            "step": float(step),
            "settling_time": settle,
            "steady_state_error": float(seg_err[-tail:].max()),
        })
        prev_ref = ref

    return {
        "steps": len(trace),
        "max_abs_u": float(np.abs(arr["u"]).max()),
        "max_abs_du": float(np.abs(arr["du"]).max()),
        "u_bounds": list(u_bounds) if u_bounds is not None else None,
        "du_bounds": list(du_bounds) if du_bounds is not None else None,
        "violations": violations,
        "relaxed_steps": sum("relaxed" in f for f in trace.flags),
        "total_cost": float(arr["cost"].sum()),
        "segments": segments,
    }


TRACE_HEADER = ["t", "v", "u", "du", "y_r", "cost", "flags"]


def write_trace_csv(trace: ClosedLoopTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in zip(trace.t, trace.v, trace.u, trace.du, trace.y_r, trace.cost, trace.flags):
            w.writerow([format_float(x) for x in row[:-1]] + [row[-1]])


def read_trace_csv(path, dt: float | None = None) -> ClosedLoopTrace:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        rows = list(reader)
    if dt is None:
        dt = float(rows[1]["t"]) - float(rows[0]["t"]) if len(rows) > 1 else 1.0
    trace = ClosedLoopTrace(dt=dt)
    for r in rows:
        trace.append(*(float(r[k]) for k in TRACE_HEADER[:-1]), r["flags"])
    return trace


def write_prediction_csv(result: PredictionResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u", "truth", "prediction"])
        u = np.append(result.inputs, np.nan)
        for t, uk, tr, pr in zip(result.t, u, result.truth, result.prediction):
            w.writerow([format_float(t), "" if np.isnan(uk) else format_float(uk),
                        format_float(tr), format_float(pr)])


def write_metrics(metrics: dict, path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
