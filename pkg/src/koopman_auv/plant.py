"""Surge-speed dynamics of a single-screw AUV.

The vehicle speed ``v`` is driven by the propeller speed ``s`` through a
quadratic thrust law and quadratic hydrodynamic drag::

    (m - X_vdot) dv/dt = X_|v|v |v| v + (1 - t) T(s, v) + x_e
    T(s, v) = T_|s|s |s| s + T_|s|Va |s| Va,   Va = (1 - omega) v

All functions broadcast over numpy arrays so that many trajectories can be
stepped at once.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "PlantParams",
    "ThrustCoefficients",
    "derive_thrust_coefficients",
    "thrust",
    "surge_derivative",
    "rk4_step",
    "euler_step",
    "simulate",
]


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the surge model (SI units).

    Defaults are the vehicle used in the MATLAB experiments.
    """

    m: float = 146.471
    x_vdot: float = -4.876161
    x_vv: float = -6.2282
    t_ded: float = 0.1
    rho: float = 1000.0
    d: float = 0.2
    alpha1: float = 0.2
    alpha2: float = 0.1
    omega: float = 0.1

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"plant parameter {f.name} must be finite, got {value}")
        if self.m <= 0:
            raise ValueError("m must be positive")
        # rho = 0 is allowed as a degenerate "no thrust" plant
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.d <= 0:
            raise ValueError("d must be positive")
        if self.m - self.x_vdot == 0:
            raise ValueError("effective inertia m - x_vdot must be nonzero")
        if not 0 <= self.omega < 1:
            raise ValueError("omega must lie in [0, 1)")

    @property
    def inertia(self) -> float:
        return self.m - self.x_vdot

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "PlantParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown plant parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ThrustCoefficients:
    t_ss: float
    t_sva: float


def derive_thrust_coefficients(params: PlantParams) -> ThrustCoefficients:
    """Expand ``rho D^4 K_T(J0) |s| s`` with ``K_T = alpha1 + alpha2 Va / (s D)``."""
    return ThrustCoefficients(
        t_ss=params.rho * params.d**4 * params.alpha1,
        t_sva=params.rho * params.d**3 * params.alpha2,
    )


def thrust(s, v, params: PlantParams):
    """Propeller thrust [N] at propeller speed ``s`` and vehicle speed ``v``."""
    coef = derive_thrust_coefficients(params)
    s = np.asarray(s, dtype=float)
    va = (1.0 - params.omega) * np.asarray(v, dtype=float)
    out = coef.t_ss * np.abs(s) * s + coef.t_sva * np.abs(s) * va
    return out[()] if out.ndim == 0 else out


def surge_derivative(v, s, params: PlantParams, x_e=0.0):
    """Surge acceleration [m/s^2]."""
    v = np.asarray(v, dtype=float)
    force = params.x_vv * np.abs(v) * v + (1.0 - params.t_ded) * thrust(s, v, params) + x_e
    out = np.asarray(force / params.inertia)
    return out[()] if out.ndim == 0 else out


def rk4_step(v, s, dt: float, params: PlantParams, x_e=0.0):
    """Classical fourth-order Runge-Kutta step with ``s`` held over the interval."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = surge_derivative(v, s, params, x_e)
    k2 = surge_derivative(v + 0.5 * dt * k1, s, params, x_e)
    k3 = surge_derivative(v + 0.5 * dt * k2, s, params, x_e)
    k4 = surge_derivative(v + dt * k3, s, params, x_e)
    return v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(v, s, dt: float, params: PlantParams, x_e=0.0):
    """Forward Euler step with ``s`` held over the interval."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return v + dt * surge_derivative(v, s, params, x_e)


_STEPPERS: dict[str, Callable] = {"rk4": rk4_step, "euler": euler_step}


def simulate(
    v0: float,
    inputs: Sequence[float],
    dt: float,
    params: PlantParams,
    method: str = "rk4",
    x_e: float = 0.0,
) -> np.ndarray:
    """Roll the plant forward under a zero-order-hold input sequence.

    Returns an array ``[v0, v1, ..., vL]`` of length ``len(inputs) + 1``.
    """
    try:
        stepper = _STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integration method {method!r}; use one of {sorted(_STEPPERS)}") from None
    inputs = np.asarray(inputs, dtype=float).ravel()
    if not np.isfinite(v0):
        raise ValueError("v0 must be finite")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("inputs must be finite")
    out = np.empty(inputs.size + 1)
    out[0] = v0
    v = float(v0)
    for k, s in enumerate(inputs):
        v = float(stepper(v, s, dt, params, x_e))
        out[k + 1] = v
    return out

