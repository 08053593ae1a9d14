"""Ground-truth aerodynamic drag for the plant simulator.

Nothing in here is visible to the controller; the learned residual model has
to discover these curves from data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ConfigurationError, QuadState, rotation_matrix

PROFILES = ("none", "standard", "simplified", "rotor-only")


@dataclass(frozen=True)
class DragParams:
    rho: float = 1.225
    C_D: float = 0.01
    A: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.1]))
    C_rD: float = 0.0
    omega_rotor_max: float = 838.0
    z_scale: float = 5.0

    def __post_init__(self):
        A = np.broadcast_to(np.asarray(self.A, dtype=float), (3,)).copy()
        object.__setattr__(self, "A", A)
        values = [self.rho, self.C_D, self.C_rD, self.omega_rotor_max, self.z_scale, *A]
        if any(v < 0 for v in values):
            raise ConfigurationError("drag parameters must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "DragParams":
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "C_D": self.C_D,
            "A": self.A.tolist(),
            "C_rD": self.C_rD,
            "omega_rotor_max": self.omega_rotor_max,
            "z_scale": self.z_scale,
        }


def body_drag_accel(v_B, params: DragParams, mass: float) -> np.ndarray:
    """Quadratic body drag ``-1/2 rho C_D A |v| v / m`` per body axis."""
    if mass <= 0:
        raise ConfigurationError("mass must be positive")
    v_B = np.asarray(v_B, dtype=float)
    return -0.5 * params.rho * params.C_D * params.A * np.abs(v_B) * v_B / mass


def rotor_drag_accel(v_B, u, params: DragParams, mass: float) -> np.ndarray:
    """Rotor drag, proportional to rotor speed and the in-plane body velocity."""
    if mass <= 0:
        raise ConfigurationError("mass must be positive")
    v_B = np.asarray(v_B, dtype=float)
    omega = params.omega_rotor_max * np.sum(u) / 4.0
    v_perp = np.array([v_B[0], v_B[1], 0.0])
    return -omega * params.C_rD * v_perp / mass


def simplified_body_drag_accel(v_B, params: DragParams) -> np.ndarray:
    """``-C_D sign(v) v^2`` per axis with the body z axis scaled up."""
    v_B = np.asarray(v_B, dtype=float)
    scale = np.array([1.0, 1.0, params.z_scale])
    return -params.C_D * scale * np.abs(v_B) * v_B


def drag_accel_body(v_B, u, params: DragParams, mass: float, profile: str = "simplified") -> np.ndarray:
    """Total drag acceleration in the body frame for the named profile."""
    if profile == "none":
        return np.zeros(3)
    if profile == "standard":
        return body_drag_accel(v_B, params, mass) + rotor_drag_accel(v_B, u, params, mass)
    if profile == "simplified":
        a = simplified_body_drag_accel(v_B, params)
        if params.C_rD:
            a = a + rotor_drag_accel(v_B, u, params, mass)
        return a
    if profile == "rotor-only":
        return rotor_drag_accel(v_B, u, params, mass)
    raise ConfigurationError(f"unknown drag profile {profile!r}; expected one of {PROFILES}")


def plant_drag_accel(x: QuadState, u, params: DragParams, mass: float, profile: str = "simplified") -> np.ndarray:
    """Drag acceleration (body frame) acting on the quadrotor in state ``x``."""
    return drag_accel_body(x.v_body, u, params, mass, profile)


def check_profile(profile: str) -> str:
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown drag profile {profile!r}; expected one of {PROFILES}")
    return profile


def drag_field_vector(x: np.ndarray, u: np.ndarray, params: DragParams, mass: float, profile: str) -> np.ndarray:
    """World-frame velocity derivative contributed by drag, for a raw state vector."""
    R = rotation_matrix(x[3:7])
    a_B = drag_accel_body(R.T @ x[7:10], u, params, mass, profile)
    return R @ a_B
