"""Multiple-shooting NMPC with a real-time-iteration SQP solver.

Each call performs one Gauss-Newton SQP iteration: the dynamics are
linearized along the warm-start trajectory with exact RK4 sensitivities, the
resulting QP is condensed onto the input sequence and solved with a primal
active-set method under the input box.  The learned drag enters only through
an :class:`RgpParamVector`, which can be swapped between calls without
touching any other structure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .augmented import RgpParamVector, pred_batch, pred_jacobian
from .dynamics import NU, NX, Q_SLICE, ConfigurationError, QuadParams, QuadState, quat_conj, quat_mul

NE = 12  # state-error dimension (attitude as a 3-vector)


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration and data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OcpConfig:
    t_h: float = 1.0
    n_h: int = 5
    q_pos: float = 10.0
    q_att: float = 5.0
    q_vel: float = 1.0
    q_rate: float = 0.1
    r: float = 0.1
    u_min: float = 0.0
    u_max: float = 1.0
    n_substeps: int = 2
    qp_max_iter: int = 200

    def __post_init__(self):
        if self.t_h <= 0 or self.n_h < 1 or self.n_substeps < 1:
            raise ConfigurationError("need t_h > 0, n_h >= 1 and n_substeps >= 1")
        if min(self.q_pos, self.q_att, self.q_vel, self.q_rate) < 0 or self.r <= 0:
            raise ConfigurationError("state weights must be nonnegative and input weights positive")
        if not 0.0 <= self.u_min < self.u_max <= 1.0:
            raise ConfigurationError("input bounds must satisfy 0 <= u_min < u_max <= 1")

    @property
    def T_h(self) -> float:
        return self.t_h / self.n_h

    @property
    def Q(self) -> np.ndarray:
        return np.repeat([self.q_pos, self.q_att, self.q_vel, self.q_rate], 3)

    @property
    def R(self) -> np.ndarray:
        return np.full(NU, self.r)

    @classmethod
    def from_dict(cls, d: dict) -> "OcpConfig":
        return cls(**d)


@dataclass(frozen=True)
class ReferenceWindow:
    x_ref: np.ndarray  # (n_h + 1, 13)
    u_ref: np.ndarray  # (n_h + 1, 4); the last row is unused

    def __post_init__(self):
        x = np.asarray(self.x_ref, dtype=float)
        u = np.asarray(self.u_ref, dtype=float)
        if x.ndim != 2 or x.shape[1] != NX or u.shape != (x.shape[0], NU):
            raise ConfigurationError("reference window shapes must be (n+1, 13) and (n+1, 4)")
        if np.max(np.abs(np.linalg.norm(x[:, Q_SLICE], axis=1) - 1.0)) > 1e-6:
            raise ConfigurationError("reference quaternions must be unit-norm")
        object.__setattr__(self, "x_ref", x)
        object.__setattr__(self, "u_ref", u)

    @classmethod
    def constant(cls, x: np.ndarray, u: np.ndarray, n_h: int) -> "ReferenceWindow":
        return cls(np.tile(x, (n_h + 1, 1)), np.tile(u, (n_h + 1, 1)))


@dataclass(frozen=True)
class OcpSolution:
    u_traj: np.ndarray  # (n_h, 4)
    x_traj: np.ndarray  # (n_h + 1, 13)
    kkt_residual: float = np.inf
    solve_time: float = 0.0
    qp_iterations: int = 0
    qp_failed: bool = False
    n_active: int = 0

    @classmethod
    def hover(cls, x0, quad: QuadParams, cfg: OcpConfig) -> "OcpSolution":
        """Initial guess: every node at ``x0``, every input at hover thrust."""
        x0 = np.asarray(x0.as_vector() if isinstance(x0, QuadState) else x0, dtype=float)
        return cls(np.tile(quad.hover_input, (cfg.n_h, 1)), np.tile(x0, (cfg.n_h + 1, 1)))

    def shift(self, fraction: float = 1.0) -> "OcpSolution":
        """Advance the trajectory by ``fraction`` shooting intervals.

        The tail is extended by holding the last node.  Fractions between
        0 and 1 interpolate linearly between neighbouring nodes.
        """
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        x_ext = np.vstack([self.x_traj, self.x_traj[-1:]])
        u_ext = np.vstack([self.u_traj, self.u_traj[-1:]])
        x = (1.0 - fraction) * x_ext[:-1] + fraction * x_ext[1:]
        u = (1.0 - fraction) * u_ext[:-1] + fraction * u_ext[1:]
        return replace(self, x_traj=x, u_traj=u)


@dataclass
class QpResult:
    x: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    active: np.ndarray = field(default=None)


# ---------------------------------------------------------------------------
# Box-constrained QP
# ---------------------------------------------------------------------------

def _projected_gradient_residual(x, grad, lb, ub, atol: float = 1e-12) -> float:
    """Infinity norm of the gradient projected onto the tangent cone of the box."""
    if len(x) == 0:
        return 0.0
    pg = np.where(x <= lb + atol, np.minimum(grad, 0.0), grad)
    pg = np.where(x >= ub - atol, np.maximum(pg, 0.0), pg)
    return float(np.max(np.abs(pg)))


def solve_qp(H, g, lb, ub, x0=None, max_iter: int = 200, tol: float = 1e-12) -> QpResult:
    """Primal active-set method for ``min 1/2 x'Hx + g'x`` s.t. ``lb <= x <= ub``.

    ``H`` must be symmetric positive definite on every free subspace that the
    iteration visits (positive definite ``H`` suffices).
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lb = np.broadcast_to(np.asarray(lb, dtype=float), g.shape)
    ub = np.broadcast_to(np.asarray(ub, dtype=float), g.shape)
    if np.any(lb > ub):
        raise ValueError("infeasible bounds")
    n = len(g)
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lb, ub)
    # -1: at lower bound, +1: at upper bound, 0: free
    state = np.zeros(n, dtype=int)
    state[x <= lb] = -1
    state[(x >= ub) & (state == 0)] = 1
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))) if n else 1.0)

    it = 0
    converged = False
    while it < max_iter:
        it += 1
        grad = H @ x + g
        free = state == 0
        p = np.zeros(n)
        if np.any(free):
            Hff = H[np.ix_(free, free)]
            try:
                p[free] = linalg.cho_solve(linalg.cho_factor(Hff), -grad[free])
            except linalg.LinAlgError:
                p[free] = np.linalg.lstsq(Hff, -grad[free], rcond=None)[0]
        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(x), initial=0.0)):
            # stationary on the current face: check multiplier signs
            viol = np.where(state == -1, -grad, 0.0) + np.where(state == 1, grad, 0.0)
            viol[lb == ub] = 0.0
            j = int(np.argmax(viol)) if n else 0
            if n == 0 or viol[j] <= tol * scale:
                converged = True
                break
            state[j] = 0
            continue
        alpha = 1.0
        block = -1
        for i in np.flatnonzero(free & (p != 0.0)):
            if p[i] < 0:
                a = (lb[i] - x[i]) / p[i]
            else:
                a = (ub[i] - x[i]) / p[i]
            if a < alpha:
                alpha, block = a, i
        x = x + max(alpha, 0.0) * p
        if block >= 0:
            if p[block] < 0:
                x[block], state[block] = lb[block], -1
            else:
                x[block], state[block] = ub[block], 1
    x = np.clip(x, lb, ub)
    grad = H @ x + g
    return QpResult(x, _projected_gradient_residual(x, grad, lb, ub), it, converged, state.copy())


# ---------------------------------------------------------------------------
# Shooting discretization with exact RK4 sensitivities
# ---------------------------------------------------------------------------

def discretize_batch(X, U, T_h: float, quad: QuadParams, rp: RgpParamVector, n_substeps: int = 1):
    """Integrate each row of ``X`` over ``T_h`` under constant ``U``.

    Returns ``(X_next, A, B)`` where ``A = dX_next/dX`` and ``B = dX_next/dU``
    are the exact derivatives of the RK4 map (no renormalization).
    """
    if T_h <= 0:
        raise ValueError("T_h must be positive")
    X = np.array(X, dtype=float)
    U = np.asarray(U, dtype=float)
    n = X.shape[0]
    h = T_h / n_substeps
    S = np.zeros((n, NX, NX + NU))
    S[:, :, :NX] = np.eye(NX)

    def stage(x, dx):
        f = pred_batch(x, U, quad, rp)
        Fx, Fu = pred_jacobian(x, U, quad, rp)
        dk = Fx @ dx
        dk[:, :, NX:] += Fu
        return f, dk

    for _ in range(n_substeps):
        k1, d1 = stage(X, S)
        k2, d2 = stage(X + 0.5 * h * k1, S + 0.5 * h * d1)
        k3, d3 = stage(X + 0.5 * h * k2, S + 0.5 * h * d2)
        k4, d4 = stage(X + h * k3, S + h * d3)
        X = X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        S = S + h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(S))):
        raise SolverError("non-finite values while integrating the prediction model")
    return X, S[:, :, :NX], S[:, :, NX:]


def discretize(x, u, T_h: float, quad: QuadParams, rp: RgpParamVector | None = None, n_substeps: int = 1):
    """Single-node version of :func:`discretize_batch`."""
    x = np.asarray(x.as_vector() if isinstance(x, QuadState) else x, dtype=float)
    rp = rp if rp is not None else RgpParamVector.zeros()
    Xn, A, B = discretize_batch(x[None], np.asarray(u, dtype=float)[None], T_h, quad, rp, n_substeps)
    return Xn[0], A[0], B[0]


# ---------------------------------------------------------------------------
# Tracking cost
# ---------------------------------------------------------------------------

def _left_matrix(a: np.ndarray) -> np.ndarray:
    """``L(a)`` with ``a * q = L(a) q``."""
    w, x, y, z = a
    return np.array([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def state_error(x: np.ndarray, x_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Error vector (12) and its exact Jacobian w.r.t. ``x`` (12 x 13)."""
    Latt = 2.0 * _left_matrix(quat_conj(x_ref[Q_SLICE]))[1:]
    e = np.concatenate([x[0:3] - x_ref[0:3], Latt @ x[Q_SLICE], x[7:13] - x_ref[7:13]])
    E = np.zeros((NE, NX))
    E[0:3, 0:3] = np.eye(3)
    E[3:6, 3:7] = Latt
    E[6:12, 7:13] = np.eye(6)
    return e, E


def tracking_cost(x_traj, u_traj, ref: ReferenceWindow, cfg: OcpConfig) -> float:
    Q, R = cfg.Q, cfg.R
    J = 0.0
    for i in range(1, cfg.n_h + 1):
        e, _ = state_error(x_traj[i], ref.x_ref[i])
        J += e @ (Q * e)
    du = u_traj - ref.u_ref[: cfg.n_h]
    return float(J + np.sum(R * du * du))


# ---------------------------------------------------------------------------
# One RTI iteration
# ---------------------------------------------------------------------------

def sqp_rti_step(
    cfg: OcpConfig,
    x0,
    ref: ReferenceWindow,
    warm: OcpSolution,
    rp: RgpParamVector,
    quad: QuadParams = QuadParams(),
) -> OcpSolution:
    """One Gauss-Newton SQP iteration around ``warm`` with a full step."""
    t_start = time.perf_counter()
    N = cfg.n_h
    x0 = np.asarray(x0.as_vector() if isinstance(x0, QuadState) else x0, dtype=float)
    xs = np.asarray(warm.x_traj, dtype=float)
    us = np.asarray(warm.u_traj, dtype=float)
    if xs.shape != (N + 1, NX) or us.shape != (N, NU) or ref.x_ref.shape[0] != N + 1:
        raise ConfigurationError("warm start or reference does not match the horizon")

    F, A, B = discretize_batch(xs[:N], us, cfg.T_h, quad, rp, cfg.n_substeps)
    defects = F - xs[1:]
    dx0 = x0 - xs[0]

    nu_tot = N * NU
    # affine map  dx_i = c[i] + Gam[i] @ du
    c = np.zeros((N + 1, NX))
    Gam = np.zeros((N + 1, NX, nu_tot))
    c[0] = dx0
    for i in range(N):
        c[i + 1] = A[i] @ c[i] + defects[i]
        Gam[i + 1] = A[i] @ Gam[i]
        Gam[i + 1][:, i * NU : (i + 1) * NU] += B[i]

    sqQ = np.sqrt(cfg.Q)
    sqR = np.sqrt(cfg.R)
    rows_G = []
    rows_r = []
    for i in range(1, N + 1):
        e, E = state_error(xs[i], ref.x_ref[i])
        rows_G.append(sqQ[:, None] * (E @ Gam[i]))
        rows_r.append(sqQ * (e + E @ c[i]))
    Gu = np.zeros((nu_tot, nu_tot))
    Gu[np.arange(nu_tot), np.arange(nu_tot)] = np.tile(sqR, N)
    rows_G.append(Gu)
    rows_r.append(np.tile(sqR, N) * (us - ref.u_ref[:N]).reshape(-1))
    G = np.vstack(rows_G)
    r0 = np.concatenate(rows_r)
    Hq = G.T @ G
    gq = G.T @ r0

    u_flat = us.reshape(-1)
    lb = cfg.u_min - u_flat
    ub = cfg.u_max - u_flat
    kkt = max(
        float(np.max(np.abs(defects))),
        float(np.max(np.abs(dx0))),
        _projected_gradient_residual(u_flat, gq, cfg.u_min, cfg.u_max),
    )

    res = solve_qp(Hq, gq, lb, ub, max_iter=cfg.qp_max_iter)
    if not (res.converged and np.all(np.isfinite(res.x))):
        fallback = warm.shift(0.0)
        return replace(
            fallback,
            x_traj=np.vstack([x0, fallback.x_traj[1:]]),
            kkt_residual=kkt,
            solve_time=time.perf_counter() - t_start,
            qp_iterations=res.iterations,
            qp_failed=True,
        )
    du = res.x
    u_new = np.clip(u_flat + du, cfg.u_min, cfg.u_max).reshape(N, NU)
    x_new = xs + c + Gam @ du
    x_new[0] = x0
    return OcpSolution(
        u_traj=u_new,
        x_traj=x_new,
        kkt_residual=kkt,
        solve_time=time.perf_counter() - t_start,
        qp_iterations=res.iterations,
        qp_failed=False,
        n_active=int(np.count_nonzero(res.active)),
    )


# ---------------------------------------------------------------------------
# Controller wrapper
# ---------------------------------------------------------------------------

class MpcController:
    """Receding-horizon controller holding the warm start and drag parameters."""

    def __init__(self, quad: QuadParams, cfg: OcpConfig = OcpConfig(), rp: RgpParamVector | None = None,
                 control_dt: float = 0.01):
        self.quad = quad
        self.cfg = cfg
        self.control_dt = control_dt
        self.rp = rp if rp is not None else RgpParamVector.zeros()
        self._m = self.rp.m
        self.warm: OcpSolution | None = None
        self.last_solution: OcpSolution | None = None

    def update_rgp_params(self, rp: RgpParamVector) -> None:
        """Swap in new drag parameters for the next solve."""
        if rp.basis_v.shape != (3, self._m):
            raise ConfigurationError(f"parameter vector has shape {rp.basis_v.shape}, expected (3, {self._m})")
        self.rp = rp

    def reset(self, x0) -> None:
        self.warm = OcpSolution.hover(x0, self.quad, self.cfg)

    def solve(self, x0, ref: ReferenceWindow) -> OcpSolution:
        x0 = np.asarray(x0.as_vector() if isinstance(x0, QuadState) else x0, dtype=float)
        if self.warm is None:
            self.reset(x0)
        sol = sqp_rti_step(self.cfg, x0, ref, self.warm, self.rp, self.quad)
        self.last_solution = sol
        self.warm = sol.shift(min(1.0, self.control_dt / self.cfg.T_h))
        return sol
