"""Gradient-descent orientation filter, static bias calibration and normal extraction."""

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from tactile_recon.errors import DataFormatError, NumericalError
from tactile_recon.models import FilterConfig
from tactile_recon.quaternion_kinematics import (
    GRAVITY,
    Quaternion,
    compose_initial_orientation,
    hamilton_product,
    normalize,
    quat_from_accel,
    quat_z_rotation,
    rotate_vector,
    vec3,
)


SENSOR_OUTWARD_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class ImuReading:
    accel: np.ndarray  # gravity units
    gyro: np.ndarray  # rad/s
    dt: float  # seconds since the previous reading

    def __post_init__(self):
        accel = vec3(self.accel)
        gyro = vec3(self.gyro)
        if not (np.all(np.isfinite(accel)) and np.all(np.isfinite(gyro))):
            raise DataFormatError("IMU reading has non-finite components")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DataFormatError(f"IMU reading needs dt > 0, got {self.dt}")
        object.__setattr__(self, "accel", accel)
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "dt", float(self.dt))


@dataclass(frozen=True)
class CalibrationState:
    eps_acc_base: np.ndarray
    eps_gyr_base: np.ndarray

    def __post_init__(self):
        eps_acc = vec3(self.eps_acc_base)
        eps_gyr = vec3(self.eps_gyr_base)
        if not (np.all(np.isfinite(eps_acc)) and np.all(np.isfinite(eps_gyr))):
            raise NumericalError("calibration errors must be finite")
        object.__setattr__(self, "eps_acc_base", eps_acc)
        object.__setattr__(self, "eps_gyr_base", eps_gyr)

    @classmethod
    def zero(cls) -> "CalibrationState":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class FilterState:
    q: Quaternion
    beta: float = 0.1
    grad_epsilon: float = 1e-12

    @classmethod
    def from_config(cls, q: Quaternion, config: FilterConfig) -> "FilterState":
        return cls(q=q, beta=config.beta, grad_epsilon=config.grad_epsilon)


def objective_and_jacobian(q: Quaternion, a_s) -> tuple[np.ndarray, np.ndarray]:
    """Gravity residual ``q* ⊗ g ⊗ q - a_s`` and its gradient ``Jᵀ f`` as ``[w, x, y, z]``."""
    w, x, y, z = q.w, q.x, q.y, q.z
    ax, ay, az = vec3(a_s)

    f_g = np.array(
        [
            2.0 * (x * z - w * y) - ax,
            2.0 * (w * x + y * z) - ay,
            1.0 - 2.0 * (x * x + y * y) - az,
        ]
    )
    jacobian = np.array(
        [
            [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
            [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
            [0.0, -4.0 * x, -4.0 * y, 0.0],
        ]
    )
    return f_g, jacobian.T @ f_g


def filter_update(state: FilterState, reading: ImuReading) -> FilterState:
    q = state.q
    q_dot = hamilton_product(q, Quaternion.pure(reading.gyro)).as_array() * 0.5

    accel_norm = float(np.linalg.norm(reading.accel))
    if accel_norm > 0.0 and state.beta > 0.0:
        _, grad = objective_and_jacobian(q, reading.accel / accel_norm)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm >= state.grad_epsilon:
            q_dot = q_dot - state.beta * grad / grad_norm

    updated = q.as_array() + q_dot * reading.dt
    return replace(state, q=normalize(Quaternion.from_array(updated)))


def run_filter(
    state: FilterState,
    readings: Iterable[ImuReading],
    calib: Optional[CalibrationState] = None,
) -> FilterState:
    """Apply ``filter_update`` over a trace, bias-correcting with the running estimate."""
    for reading in readings:
        if calib is not None:
            reading = correct_reading(reading, calib, state.q)
        state = filter_update(state, reading)
    return state


def calibrate(static_readings: Sequence[ImuReading], q_s_b: Quaternion) -> CalibrationState:
    if len(static_readings) == 0:
        raise DataFormatError("calibration needs at least one static reading")

    mean_acc = np.mean([r.accel for r in static_readings], axis=0)
    mean_gyr = np.mean([r.gyro for r in static_readings], axis=0)

    eps_acc = rotate_vector(q_s_b, mean_acc) - GRAVITY
    eps_gyr = rotate_vector(q_s_b, mean_gyr)
    return CalibrationState(eps_acc, eps_gyr)


def correct_reading(reading: ImuReading, calib: CalibrationState, q_t: Quaternion) -> ImuReading:
    accel = reading.accel - rotate_vector(q_t, calib.eps_acc_base)
    gyro = reading.gyro - rotate_vector(q_t, calib.eps_gyr_base)
    return ImuReading(accel, gyro, reading.dt)


def normal_from_orientation(q: Quaternion) -> np.ndarray:
    n = rotate_vector(q, SENSOR_OUTWARD_AXIS)
    return n / np.linalg.norm(n)


def seed_orientation(accel, theta_z: float) -> Quaternion:
    a = vec3(accel)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise NumericalError("cannot seed orientation from a zero accelerometer sample")
    return compose_initial_orientation(quat_z_rotation(theta_z), quat_from_accel(a / norm))


def estimate_normal(
    trace: Sequence[ImuReading],
    calib: Optional[CalibrationState],
    theta_z: float,
    config: Optional[FilterConfig] = None,
) -> tuple[Quaternion, np.ndarray]:
    """Seed from the first sample, filter the whole trace and read off the contact normal."""
    if len(trace) == 0:
        raise DataFormatError("IMU trace is empty")
    config = config or FilterConfig()

    first = trace[0]
    q_seed = seed_orientation(first.accel, theta_z)
    if calib is not None:
        q_seed = seed_orientation(correct_reading(first, calib, q_seed).accel, theta_z)

    state = run_filter(FilterState.from_config(q_seed, config), trace, calib)
    return state.q, normal_from_orientation(state.q)
