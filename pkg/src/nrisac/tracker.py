"""
Extended Kalman filter over the kinematic state ``[azimuth, range, speed, beta]``.

The vehicle moves along a straight road; ``speed`` is its along-road speed,
and the closing (radial) component is ``speed * sin(azimuth)``. One step of
the evolution model over ``dt`` is::

    theta' = theta - v dt cos(theta) / d
    d'     = d - v dt sin(theta)
    v'     = v
    beta'  = beta (1 - v dt sin(theta) / d)**2

Measurements observe the full state directly (identity observation matrix).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .constants import (BETA_MEASUREMENT_REL_VAR, BETA_PROCESS_REL_VAR, MEASUREMENT_STD,
                        PROCESS_STD)
from .errors import ConditioningError, DegenerateGeometryError
from .ofdm import reflection_coefficient


class TrackState(NamedTuple):
    azimuth: float
    range: float
    speed: float
    refl_coeff: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @classmethod
    def from_array(cls, x) -> "TrackState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal process and measurement variances, in state order."""

    process: tuple
    measurement: tuple

    def __post_init__(self):
        if len(self.process) != 4 or len(self.measurement) != 4:
            raise ValueError("need four process and four measurement variances")
        if min(self.process) < 0 or min(self.measurement) < 0:
            raise ValueError("variances must be nonnegative")

    @classmethod
    def default(cls, beta_scale: float = 1.0, measurement_scale: float = 1.0) -> "NoiseSpec":
        """
        Link-level defaults. Reflection-coefficient variances are relative and
        scaled by ``beta_scale**2``; ``measurement_scale`` multiplies every
        measurement variance (hook for SNR-dependent accuracy).
        """
        q = [s**2 for s in PROCESS_STD] + [BETA_PROCESS_REL_VAR * beta_scale**2]
        r = [s**2 * measurement_scale for s in MEASUREMENT_STD]
        r.append(BETA_MEASUREMENT_REL_VAR * beta_scale**2 * measurement_scale)
        return cls(tuple(q), tuple(r))

    @cached_property
    def q(self) -> np.ndarray:
        return np.diag(np.asarray(self.process, dtype=float))

    @cached_property
    def r(self) -> np.ndarray:
        return np.diag(np.asarray(self.measurement, dtype=float))


@dataclass(frozen=True)
class TrackBelief:
    mean: TrackState
    mse: np.ndarray


def _evolve(x: np.ndarray, dt: float) -> np.ndarray:
    theta, d, v, beta = x
    if not d > 0:
        raise DegenerateGeometryError(f"range must be positive, got {d}")
    step = v * dt
    iota = 1.0 - step * np.sin(theta) / d
    out = np.array([theta - step * np.cos(theta) / d, d - step * np.sin(theta), v, beta * iota**2])
    if not out[1] > 0:
        raise DegenerateGeometryError(f"range underflow to {out[1]}")
    return out


def evolve_state(prev: TrackState, dt: float, noise=None) -> TrackState:
    """
    Advance a state by one step of the evolution model.

    Parameters
    ----------
    prev : TrackState
    dt : float
        Step duration in seconds.
    noise : array_like of 4, optional
        Additive process noise.

    Raises
    ------
    DegenerateGeometryError
        If the range is not positive before or after the step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = _evolve(np.asarray(prev, dtype=float), dt)
    if noise is not None:
        x = x + np.asarray(noise, dtype=float)
    return TrackState.from_array(x)


def _jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    theta, d, v, beta = x
    if not d > 0:
        raise DegenerateGeometryError(f"range must be positive, got {d}")
    s, c = np.sin(theta), np.cos(theta)
    iota = 1.0 - v * dt * s / d
    return np.array([
        [1 + v * dt * s / d, v * dt * c / d**2, -dt * c / d, 0.0],
        [-v * dt * c, 1.0, -dt * s, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-2 * beta * v * dt * c / d * iota, 2 * beta * v * dt * s / d**2 * iota,
         -2 * beta * dt * s / d * iota, iota**2],
    ])


def jacobian(state: TrackState, dt: float) -> np.ndarray:
    """Jacobian of the evolution model with respect to the state."""
    return _jacobian(np.asarray(state, dtype=float), dt)


class EkfOutput(NamedTuple):
    posterior: TrackBelief
    one_ahead: TrackState
    two_ahead: TrackState
    prior: TrackState


def ekf_step(belief: TrackBelief, measurement: TrackState | None, noise: NoiseSpec, dt: float,
             joseph: bool = False) -> EkfOutput:
    """
    One predict/update cycle.

    ``one_ahead`` is the prediction for the next slot from the posterior.
    ``two_ahead`` is the next-slot prediction made from the current prior,
    i.e. without this slot's measurement; the vehicle-side combiner uses it
    because the measurement is not available there in time. Passing
    ``measurement=None`` skips the update.

    Raises
    ------
    ConditioningError
        If the innovation covariance cannot be inverted.
    """
    x_prev = np.asarray(belief.mean, dtype=float)
    g = _jacobian(x_prev, dt)
    x_pred = _evolve(x_prev, dt)
    m_pred = g @ belief.mse @ g.T + noise.q
    if measurement is None:
        x_post, m_post = x_pred, m_pred
    else:
        s = noise.r + m_pred
        try:
            if not np.all(np.isfinite(s)):
                raise np.linalg.LinAlgError
            gain = np.linalg.solve(s.T, m_pred.T).T
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("innovation covariance is singular") from exc
        innovation = np.asarray(measurement, dtype=float) - x_pred
        x_post = x_pred + gain @ innovation
        i_k = np.eye(4) - gain
        if joseph:
            m_post = i_k @ m_pred @ i_k.T + gain @ noise.r @ gain.T
        else:
            m_post = i_k @ m_pred
        m_post = 0.5 * (m_post + m_post.T)
    posterior = TrackBelief(TrackState.from_array(x_post), m_post)
    one_ahead = TrackState.from_array(_evolve(x_post, dt))
    two_ahead = TrackState.from_array(_evolve(x_pred, dt))
    return EkfOutput(posterior, one_ahead, two_ahead, TrackState.from_array(x_pred))


def init_track(range_: float, speed: float, azimuth: float, noise: NoiseSpec,
               rcs: float = 1.0, inflation: float = 10.0) -> TrackBelief:
    """
    Belief seeded from an access-stage detection.

    The reflection coefficient follows from range as ``rcs (2 d)^-2``; the
    MSE is the measurement covariance inflated by ``inflation``.
    """
    if not np.isfinite([range_, speed, azimuth]).all():
        raise ValueError("detection must be finite")
    if range_ <= 0:
        raise DegenerateGeometryError(f"range must be positive, got {range_}")
    beta = float(reflection_coefficient(range_, rcs))
    return TrackBelief(TrackState(float(azimuth), float(range_), float(speed), beta),
                       inflation * noise.r)
