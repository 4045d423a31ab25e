"""Constant-velocity Kalman smoothing of per-reflector optical points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .spatial import OpticalFrame, OpticalPoint


@dataclass(frozen=True)
class KalmanParams:
    # White-acceleration process noise (m/s^2) and isotropic measurement
    # noise (m); both exposed in the pipeline config.
    accel_noise: float = 0.5
    meas_noise: float = 0.005
    init_pos_var: float = 1e-4
    init_vel_var: float = 1.0


@dataclass
class TrackState:
    """Position/velocity state with a symmetric positive-definite covariance."""

    position: np.ndarray  # (3,)
    velocity: np.ndarray  # (3,)
    covariance: np.ndarray  # (6, 6) SPD

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def _check_spd(cov: np.ndarray) -> np.ndarray:
    sym = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance lost positive definiteness") from None
    return sym


def init_state(measurement: np.ndarray, params: KalmanParams) -> TrackState:
    """First measurement seeds the state at the measurement, velocity zero."""
    cov = np.diag([params.init_pos_var] * 3 + [params.init_vel_var] * 3)
    return TrackState(np.asarray(measurement, dtype=np.float64).copy(),
                      np.zeros(3), cov)


# Transition/noise matrices depend only on (dt, params); cache them.
_MATRIX_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}


def _matrices(dt: float, params: KalmanParams):
    key = (dt, params.accel_noise, params.meas_noise)
    cached = _MATRIX_CACHE.get(key)
    if cached is not None:
        return cached
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    q = params.accel_noise ** 2
    Q = np.zeros((6, 6))
    Q[:3, :3] = q * (dt ** 4 / 4.0) * np.eye(3)
    Q[:3, 3:] = q * (dt ** 3 / 2.0) * np.eye(3)
    Q[3:, :3] = q * (dt ** 3 / 2.0) * np.eye(3)
    Q[3:, 3:] = q * (dt ** 2) * np.eye(3)
    H = np.zeros((3, 6))
    H[:, :3] = np.eye(3)
    R = params.meas_noise ** 2 * np.eye(3)
    _MATRIX_CACHE[key] = (F, Q, H, R)
    return F, Q, H, R


def kalman_step(state: TrackState | None, measurement: OpticalPoint | None,
                dt: float, params: KalmanParams = KalmanParams()
                ) -> tuple[TrackState, OpticalPoint | None]:
    """One predict/update cycle for a single reflector track.

    With no prior state the measurement initializes the track.  With no
    measurement the state coasts (predict only) and no smoothed point is
    produced.  Raises NumericalError if the covariance update leaves the SPD
    regime; callers should reset the track.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if state is None:
        if measurement is None:
            raise ValidationError("cannot initialize a track without a measurement")
        state = init_state(measurement.position, params)
        return state, measurement

    F, Q, H, R = _matrices(dt, params)
    x = F @ state.as_vector()
    P = _check_spd(F @ state.covariance @ F.T + Q)
    if measurement is None:
        return TrackState(x[:3], x[3:], P), None

    innovation = measurement.position - x[:3]
    S = P[:3, :3] + R
    K = P[:, :3] @ np.linalg.inv(S)
    x = x + K @ innovation
    P = _check_spd((np.eye(6) - K @ H) @ P)
    new_state = TrackState(x[:3], x[3:], P)
    smoothed = OpticalPoint(measurement.reflector, x[:3].copy(),
                            measurement.confidence, measurement.frame,
                            degraded=measurement.degraded)
    return new_state, smoothed


class ReflectorTracker:
    """Owns one Kalman track per reflector across an optical-frame stream.

    The per-frame update is evaluated for all tracks at once with batched
    matrix ops; per-track scalar :func:`kalman_step` is the fallback when a
    batch member loses positive definiteness.
    """

    def __init__(self, dt: float, params: KalmanParams = KalmanParams()):
        if dt <= 0:
            raise ValidationError("dt must be positive")
        self.dt = dt
        self.params = params
        self.states: dict[int, TrackState] = {}

    def step(self, frame: OpticalFrame) -> OpticalFrame:
        """Smooth one frame; tracks without a measurement coast silently."""
        snapshot = dict(self.states)
        try:
            return self._step_batched(frame)
        except (NumericalError, np.linalg.LinAlgError):
            self.states = snapshot
            return self._step_scalar(frame)

    def _step_scalar(self, frame: OpticalFrame) -> OpticalFrame:
        out = OpticalFrame(frame=frame.frame)
        seen = set()
        for idx in sorted(frame.points):
            point = frame.points[idx]
            seen.add(idx)
            try:
                state, smoothed = kalman_step(self.states.get(idx), point,
                                              self.dt, self.params)
            except NumericalError:
                state, smoothed = kalman_step(None, point, self.dt, self.params)
            self.states[idx] = state
            if smoothed is not None:
                out.add(smoothed)
        for idx in list(self.states):
            if idx not in seen:
                state, _ = kalman_step(self.states[idx], None, self.dt, self.params)
                self.states[idx] = state
        return out

    def _step_batched(self, frame: OpticalFrame) -> OpticalFrame:
        out = OpticalFrame(frame=frame.frame)
        F, Q, H, R = _matrices(self.dt, self.params)
        update_ids = [i for i in sorted(frame.points) if i in self.states]
        coast_ids = [i for i in sorted(self.states) if i not in frame.points]
        for idx in sorted(frame.points):
            if idx not in self.states:
                state, smoothed = kalman_step(None, frame.points[idx],
                                              self.dt, self.params)
                self.states[idx] = state
                out.add(smoothed)

        batch = update_ids + coast_ids
        if batch:
            x = np.stack([self.states[i].as_vector() for i in batch])
            p = np.stack([self.states[i].covariance for i in batch])
            x = x @ F.T
            p = F @ p @ F.T + Q
            p = 0.5 * (p + np.transpose(p, (0, 2, 1)))
            np.linalg.cholesky(p)  # SPD check for every track at once
            n_up = len(update_ids)
            if n_up:
                z = np.stack([frame.points[i].position for i in update_ids])
                innovation = z - x[:n_up, :3]
                s = p[:n_up, :3, :3] + R
                k = p[:n_up, :, :3] @ np.linalg.inv(s)
                x[:n_up] += (k @ innovation[:, :, None])[:, :, 0]
                p[:n_up] = (np.eye(6) - k @ H) @ p[:n_up]
                p[:n_up] = 0.5 * (p[:n_up] + np.transpose(p[:n_up], (0, 2, 1)))
                np.linalg.cholesky(p[:n_up])
            for j, idx in enumerate(batch):
                self.states[idx] = TrackState(x[j, :3].copy(), x[j, 3:].copy(),
                                              p[j])
            for j, idx in enumerate(update_ids):
                point = frame.points[idx]
                out.add(OpticalPoint(point.reflector, x[j, :3].copy(),
                                     point.confidence, point.frame,
                                     degraded=point.degraded))
        return out
