"""Drag-acceleration observations from one-step prediction residuals."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import ConfigurationError, QuadState, rotation_matrix
from .rgp import DragObservation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResidualConfig:
    dt_min: float = 1e-4
    outlier_cap: float = 20.0

    def __post_init__(self):
        if self.dt_min <= 0 or self.outlier_cap <= 0:
            raise ConfigurationError("dt_min and outlier_cap must be positive")


def estimate_drag_observation(v_meas_next_B, v_pred_next_B, dt: float, t: float, cfg: ResidualConfig = ResidualConfig()):
    """Residual acceleration ``(v_meas - v_pred) / dt`` paired with the measured velocity.

    Returns ``None`` when the sample is rejected (step too short or
    non-finite input).
    """
    v_meas = np.asarray(v_meas_next_B, dtype=float)
    v_pred = np.asarray(v_pred_next_B, dtype=float)
    if not dt >= cfg.dt_min:
        log.debug("rejecting observation at t=%.4f: dt=%g below %g", t, dt, cfg.dt_min)
        return None
    if not (np.all(np.isfinite(v_meas)) and np.all(np.isfinite(v_pred))):
        log.debug("rejecting non-finite observation at t=%.4f", t)
        return None
    a = np.clip((v_meas - v_pred) / dt, -cfg.outlier_cap, cfg.outlier_cap)
    return DragObservation(v_B=v_meas.copy(), a_tilde=a, t=float(t))


def observe_states(x_meas_next: QuadState, x_pred_next: QuadState, dt: float, t: float, cfg: ResidualConfig = ResidualConfig()):
    """Same as :func:`estimate_drag_observation` but from full world-frame states.

    Each velocity is brought into the body frame with its own state's attitude.
    """
    v_meas_B = rotation_matrix(x_meas_next.q).T @ x_meas_next.v
    v_pred_B = rotation_matrix(x_pred_next.q).T @ x_pred_next.v
    return estimate_drag_observation(v_meas_B, v_pred_B, dt, t, cfg)
