"""Rigid-body quadrotor model.

State vectors are laid out as ``[p_W (3), q_WB (4), v_W (3), omega_B (3)]``
with the quaternion stored scalar-first.  Angular rates live in the body
frame.  The batched functions at the bottom operate on ``(N, 13)`` arrays
and are what the controller uses; the scalar API wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

GRAVITY = 9.81
NX = 13
NU = 4

P_SLICE = slice(0, 3)
Q_SLICE = slice(3, 7)
V_SLICE = slice(7, 10)
W_SLICE = slice(10, 13)


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConfigurationError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


class IntegrationError(RuntimeError):
    """Raised when a state derivative turns non-finite during integration."""


# ---------------------------------------------------------------------------
# Quaternion algebra (scalar-first 4-arrays)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and fix the sign so that ``w >= 0``."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ContractError("cannot normalize a zero quaternion")
    q = q / n
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def rotation_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix of ``v -> q v q*``.

    This is the homogeneous (unnormalized) form, so for a non-unit ``q`` the
    result is ``|q|^2`` times a rotation.  Broadcasts over leading axes.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        w, x, y, z = q.tolist()
        return np.array(
            [
                [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
            ]
        )
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = w * w + x * x - y * y - z * z
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = w * w - x * x + y * y - z * z
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = w * w - x * x - y * y + z * z
    return R


def rotation_matrix_grad(q: np.ndarray) -> np.ndarray:
    """Partials of :func:`rotation_matrix` w.r.t. ``(w, x, y, z)``.

    Returns an array of shape ``(..., 4, 3, 3)``.
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dw = [[w, -z, y], [z, w, -x], [-y, x, w]]
    dx = [[x, y, z], [y, -x, -w], [z, w, -x]]
    dy = [[-y, x, w], [x, y, z], [-w, z, -y]]
    dz = [[-z, -w, x], [w, -z, y], [x, y, z]]
    out = np.empty(q.shape[:-1] + (4, 3, 3))
    for k, d in enumerate((dw, dx, dy, dz)):
        for i in range(3):
            for j in range(3):
                out[..., k, i, j] = 2.0 * d[i][j]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` by the unit quaternion ``q`` (``q v q*``)."""
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ContractError(f"quaternion is not unit-norm: |q| = {np.linalg.norm(q):.9f}")
    return rotation_matrix(q) @ np.asarray(v, dtype=float)


def quat_to_rotvec_error(q_ref: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Three-dimensional attitude error ``2 vec(q_ref^-1 q)``."""
    return 2.0 * quat_mul(quat_conj(q_ref), q)[..., 1:]


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=quat_identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "q", "v", "w"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        if self.q.shape != (4,) or any(getattr(self, n).shape != (3,) for n in ("p", "v", "w")):
            raise ContractError("QuadState expects p, v, w of shape (3,) and q of shape (4,)")
        if not np.all(np.isfinite(self.as_vector())):
            raise ContractError("QuadState entries must be finite")
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-6:
            raise ContractError("QuadState quaternion must be unit-norm")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.w])

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        if x.shape != (NX,):
            raise ContractError(f"state vector must have shape ({NX},), got {x.shape}")
        return cls(x[P_SLICE], x[Q_SLICE], x[V_SLICE], x[W_SLICE])

    @property
    def v_body(self) -> np.ndarray:
        return rotation_matrix(self.q).T @ self.v


def check_input(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (NU,):
        raise ContractError(f"control input must have shape ({NU},), got {u.shape}")
    if not np.all(np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ContractError(f"control input outside [0, 1]: {u}")
    return u


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters of the quadrotor (Hummingbird-class defaults)."""

    m: float = 0.72
    J: np.ndarray = field(default_factory=lambda: np.diag([0.007, 0.007, 0.012]))
    d_x: float = 0.17
    d_y: float = 0.17
    c_tau: float = 0.016
    T_max: float = 5.0
    g_W: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY]))

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape == (3,):
            J = np.diag(J)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "g_W", np.asarray(self.g_W, dtype=float))
        if self.m <= 0 or self.T_max <= 0:
            raise ConfigurationError("mass and T_max must be positive")
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ConfigurationError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(J)) <= 0:
            raise ConfigurationError("inertia must be positive definite")
        if 4.0 * self.T_max <= self.m * np.linalg.norm(self.g_W):
            raise ConfigurationError("4 * T_max must exceed the weight for hover to be feasible")
        object.__setattr__(self, "J_inv", np.linalg.inv(J))
        mixer = self.T_max * np.array(
            [
                [-self.d_y, -self.d_y, self.d_y, self.d_y],
                [-self.d_x, self.d_x, self.d_x, -self.d_x],
                [-self.c_tau, self.c_tau, -self.c_tau, self.c_tau],
            ]
        )
        object.__setattr__(self, "torque_map", mixer)
        diag = np.count_nonzero(J - np.diag(np.diag(J))) == 0
        object.__setattr__(self, "_J_diag", tuple(np.diag(J).tolist()) if diag else None)

    @property
    def hover_input(self) -> np.ndarray:
        return np.full(NU, self.m * np.linalg.norm(self.g_W) / (4.0 * self.T_max))

    @classmethod
    def from_dict(cls, d: dict) -> "QuadParams":
        known = {"m", "J", "d_x", "d_y", "c_tau", "T_max", "g_W"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown quad parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "J": self.J.tolist(),
            "d_x": self.d_x,
            "d_y": self.d_y,
            "c_tau": self.c_tau,
            "T_max": self.T_max,
            "g_W": self.g_W.tolist(),
        }


# ---------------------------------------------------------------------------
# Scalar API
# ---------------------------------------------------------------------------

def thrust_torque(u, params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    """Collective body thrust and body torque produced by rotor activations."""
    u = check_input(u)
    T_B = np.array([0.0, 0.0, params.T_max * u.sum()])
    return T_B, params.torque_map @ u


def f_phys(x: QuadState, u, params: QuadParams) -> np.ndarray:
    """Nominal state derivative of the rigid-body model."""
    u = check_input(u)
    return physics_vector(x.as_vector(), u, params)


def rk4_step(f: Callable[[np.ndarray, np.ndarray], np.ndarray], x: QuadState, u, dt: float) -> QuadState:
    """One classical RK4 step of ``xdot = f(x, u)`` followed by renormalization.

    ``f`` receives the raw 13-vector (intermediate stages carry non-unit
    quaternions) and the input array.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    u = np.asarray(u, dtype=float)
    x_next = rk4_vector(f, x.as_vector(), u, dt)
    return QuadState.from_vector(x_next)


def rk4_vector(f, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError(f"non-finite state after RK4 step (dt={dt}) from x={x}, u={u}")
    x_next[Q_SLICE] = quat_normalize(x_next[Q_SLICE])
    return x_next


def physics_field(params: QuadParams):
    """``f(x, u)`` closure over the nominal model, suitable for :func:`rk4_step`."""

    def f(x, u):
        return physics_vector(x, u, params)

    return f


def physics_vector(x: np.ndarray, u: np.ndarray, params: QuadParams) -> np.ndarray:
    """Single-state version of :func:`physics_batch`.

    Written with scalar arithmetic because the closed loop calls it tens of
    thousands of times per episode and array overhead dominates at this size.
    """
    J = params._J_diag
    if J is None:
        return physics_batch(x[None], u[None], params)[0]
    _, _, _, qw, qx, qy, qz, vx, vy, vz, wx, wy, wz = x.tolist()
    a = params.T_max * float(u[0] + u[1] + u[2] + u[3]) / params.m
    tau = (params.torque_map @ u).tolist()
    gx, gy, gz = params.g_W.tolist()
    Jwx, Jwy, Jwz = J[0] * wx, J[1] * wy, J[2] * wz
    return np.array(
        [
            vx,
            vy,
            vz,
            0.5 * (-qx * wx - qy * wy - qz * wz),
            0.5 * (qw * wx + qy * wz - qz * wy),
            0.5 * (qw * wy - qx * wz + qz * wx),
            0.5 * (qw * wz + qx * wy - qy * wx),
            a * 2.0 * (qx * qz + qw * qy) + gx,
            a * 2.0 * (qy * qz - qw * qx) + gy,
            a * (qw * qw - qx * qx - qy * qy + qz * qz) + gz,
            (tau[0] - (wy * Jwz - wz * Jwy)) / J[0],
            (tau[1] - (wz * Jwx - wx * Jwz)) / J[1],
            (tau[2] - (wx * Jwy - wy * Jwx)) / J[2],
        ]
    )


# ---------------------------------------------------------------------------
# Batched model and analytic Jacobians
# ---------------------------------------------------------------------------

def _fill(out: np.ndarray, entries) -> np.ndarray:
    """Write ``{(i, j): column}`` entries into the trailing axes of ``out``."""
    for (i, j), val in entries.items():
        out[:, i, j] = val
    return out


def _omega_right(w: np.ndarray) -> np.ndarray:
    """Matrix ``M(w)`` with ``q * (0, w) = M(w) q``; shape ``(N, 4, 4)``."""
    wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
    return _fill(
        np.zeros((w.shape[0], 4, 4)),
        {
            (0, 1): -wx, (0, 2): -wy, (0, 3): -wz,
            (1, 0): wx, (1, 2): wz, (1, 3): -wy,
            (2, 0): wy, (2, 1): -wz, (2, 3): wx,
            (3, 0): wz, (3, 1): wy, (3, 2): -wx,
        },
    )


def _xi(q: np.ndarray) -> np.ndarray:
    """Matrix ``X(q)`` with ``q * (0, w) = X(q) w``; shape ``(N, 4, 3)``."""
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return _fill(
        np.empty((q.shape[0], 4, 3)),
        {
            (0, 0): -qx, (0, 1): -qy, (0, 2): -qz,
            (1, 0): qw, (1, 1): -qz, (1, 2): qy,
            (2, 0): qz, (2, 1): qw, (2, 2): -qx,
            (3, 0): -qy, (3, 1): qx, (3, 2): qw,
        },
    )


def _skew(a: np.ndarray) -> np.ndarray:
    return _fill(
        np.zeros((a.shape[0], 3, 3)),
        {
            (0, 1): -a[:, 2], (0, 2): a[:, 1],
            (1, 0): a[:, 2], (1, 2): -a[:, 0],
            (2, 0): -a[:, 1], (2, 1): a[:, 0],
        },
    )


def _body_z(q: np.ndarray) -> np.ndarray:
    """Third column of the rotation matrix, i.e. ``q (.) e_z``, for rows of ``q``."""
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zb = np.empty((q.shape[0], 3))
    zb[:, 0] = 2.0 * (qx * qz + qw * qy)
    zb[:, 1] = 2.0 * (qy * qz - qw * qx)
    zb[:, 2] = qw * qw - qx * qx - qy * qy + qz * qz
    return zb


def physics_batch(X: np.ndarray, U: np.ndarray, params: QuadParams) -> np.ndarray:
    """Nominal derivative for each row of ``X`` (shape ``(N, 13)``)."""
    q = X[:, Q_SLICE]
    v = X[:, V_SLICE]
    w = X[:, W_SLICE]
    thrust = params.T_max * U.sum(axis=1) / params.m
    dX = np.empty_like(X)
    dX[:, P_SLICE] = v
    dX[:, Q_SLICE] = 0.5 * (_xi(q) @ w[:, :, None])[:, :, 0]
    dX[:, V_SLICE] = thrust[:, None] * _body_z(q) + params.g_W
    Jw = w @ params.J.T
    gyro = np.empty_like(w)
    gyro[:, 0] = w[:, 1] * Jw[:, 2] - w[:, 2] * Jw[:, 1]
    gyro[:, 1] = w[:, 2] * Jw[:, 0] - w[:, 0] * Jw[:, 2]
    gyro[:, 2] = w[:, 0] * Jw[:, 1] - w[:, 1] * Jw[:, 0]
    dX[:, W_SLICE] = (U @ params.torque_map.T - gyro) @ params.J_inv.T
    return dX


def physics_jacobian(X: np.ndarray, U: np.ndarray, params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(df/dx, df/du)`` of :func:`physics_batch`, shapes ``(N,13,13)`` and ``(N,13,4)``."""
    n = X.shape[0]
    q = X[:, Q_SLICE]
    w = X[:, W_SLICE]
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    Fx = np.zeros((n, NX, NX))
    Fu = np.zeros((n, NX, NU))
    Fx[:, P_SLICE, V_SLICE] = np.eye(3)
    Fx[:, Q_SLICE, Q_SLICE] = 0.5 * _omega_right(w)
    Fx[:, Q_SLICE, W_SLICE] = 0.5 * _xi(q)

    thrust = params.T_max * U.sum(axis=1) / params.m
    dzb = _fill(
        np.empty((n, 3, 4)),
        {
            (0, 0): qy, (0, 1): qz, (0, 2): qw, (0, 3): qx,
            (1, 0): -qx, (1, 1): -qw, (1, 2): qz, (1, 3): qy,
            (2, 0): qw, (2, 1): -qx, (2, 2): -qy, (2, 3): qz,
        },
    )
    Fx[:, V_SLICE, Q_SLICE] = (2.0 * thrust)[:, None, None] * dzb
    Fu[:, V_SLICE, :] = (params.T_max / params.m) * _body_z(q)[:, :, None]

    J = params.J
    Jw = w @ J.T
    gyro = _skew(w) @ J - _skew(Jw)
    Fx[:, W_SLICE, W_SLICE] = -params.J_inv @ gyro
    Fu[:, W_SLICE, :] = params.J_inv @ params.torque_map
    return Fx, Fu
