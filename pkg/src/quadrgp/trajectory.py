"""Reference trajectories: random-waypoint splines and a speed-ramped circle.

Full 13-dimensional references are recovered from the position path with the
differential-flatness map: the body z axis is aligned with ``a - g`` and the
yaw either held constant or turned along the velocity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.spatial.transform import Rotation

from .dynamics import NU, NX, ConfigurationError, QuadParams, quat_conj, quat_mul, quat_normalize

YAW_MODES = ("constant", "velocity")
CSV_COLUMNS = (
    "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,u0,u1,u2,u3"
)


@dataclass(frozen=True)
class SampledTrajectory:
    times: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    f_s: float
    v_max: float = np.inf
    name: str = "trajectory"

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        t = self.times
        if self.x_ref.shape != (len(t), NX) or self.u_ref.shape != (len(t), NU):
            raise ValueError("row counts of times, x_ref and u_ref disagree")
        if len(t) > 1 and np.max(np.abs(np.diff(t) - 1.0 / self.f_s)) > 1e-9:
            raise ValueError("time grid is not uniform at 1/f_s")
        if np.max(np.abs(np.linalg.norm(self.x_ref[:, 3:7], axis=1) - 1.0)) > 1e-9:
            raise ValueError("reference quaternions are not unit-norm")
        speed = np.linalg.norm(self.x_ref[:, 7:10], axis=1)
        if np.max(speed) > self.v_max + 1e-6:
            raise ValueError(f"reference speed {np.max(speed):.6f} exceeds v_max {self.v_max}")
        if np.any(self.u_ref < 0) or np.any(self.u_ref > 1):
            raise ValueError("reference inputs outside [0, 1]")

    def window(self, k: int, n_h: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
        """Rows at ``k, k + stride, ...`` (``n_h + 1`` of them), holding the last sample."""
        idx = np.minimum(k + stride * np.arange(n_h + 1), len(self.times) - 1)
        return self.x_ref[idx], self.u_ref[idx]

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([self.times, self.x_ref, self.u_ref])
        header = f"{CSV_COLUMNS}\n# f_s={self.f_s!r} v_max={self.v_max!r} name={self.name}"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        return path

    @classmethod
    def from_csv(cls, path) -> "SampledTrajectory":
        path = Path(path)
        with path.open() as fh:
            fh.readline()
            meta_line = fh.readline().strip()
        meta = dict(item.split("=", 1) for item in meta_line.lstrip("# ").split())
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(
            times=data[:, 0],
            x_ref=data[:, 1:14],
            u_ref=data[:, 14:18],
            f_s=float(meta["f_s"]),
            v_max=float(meta.get("v_max", "inf")),
            name=meta.get("name", path.stem),
        )


# ---------------------------------------------------------------------------
# Waypoints and polynomial fitting
# ---------------------------------------------------------------------------

def random_waypoints(hsize: float = 10.0, n: int = 6, seed: int = 0) -> np.ndarray:
    """``n`` points uniform in a cube of side ``hsize`` raised ``hsize`` above ground."""
    if n < 2:
        raise ConfigurationError("need at least two waypoints")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-hsize / 2.0, hsize / 2.0, size=(n, 2))
    z = rng.uniform(hsize, 2.0 * hsize, size=(n, 1))
    return np.hstack([xy, z])


@dataclass(frozen=True)
class PiecewisePolynomial:
    """Quintic spline through waypoints with zero end velocity and acceleration."""

    knot_times: np.ndarray
    waypoints: np.ndarray

    def __post_init__(self):
        bc = [(1, np.zeros(3)), (2, np.zeros(3))]
        spline = make_interp_spline(self.knot_times, self.waypoints, k=5, bc_type=(bc, bc))
        object.__setattr__(self, "_spline", spline)

    @property
    def duration(self) -> float:
        return float(self.knot_times[-1])

    def __call__(self, t, nu: int = 0) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self._spline(t, nu)

    def scaled(self, factor: float) -> "PiecewisePolynomial":
        return PiecewisePolynomial(self.knot_times * factor, self.waypoints)

    def limits(self, n_min: int = 4000) -> tuple[float, float]:
        """Max speed and acceleration on a dense grid (at least 1 kHz)."""
        n = max(n_min, int(np.ceil(self.duration * 1000.0)) + 1)
        t = np.linspace(0.0, self.duration, n)
        vmax = np.max(np.linalg.norm(self(t, 1), axis=1))
        amax = np.max(np.linalg.norm(self(t, 2), axis=1))
        return float(vmax), float(amax)


def fit_polynomial(waypoints, v_max: float, a_max: float, margin: float = 1e-3, max_iter: int = 10) -> PiecewisePolynomial:
    """Fit a C4 quintic spline and scale time until speed/acceleration limits hold."""
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
        raise ConfigurationError("waypoints must be an (n >= 2, 3) array")
    if not (v_max > 0 and a_max > 0):
        raise ConfigurationError("v_max and a_max must be positive")
    dist = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    if np.any(dist == 0):
        raise ConfigurationError("consecutive waypoints must differ")
    knots = np.concatenate([[0.0], np.cumsum(dist / v_max)])
    poly = PiecewisePolynomial(knots, wp)
    for _ in range(max_iter):
        v, a = poly.limits()
        factor = max(v / v_max, np.sqrt(a / a_max)) * (1.0 + margin)
        poly = poly.scaled(factor)
        v, a = poly.limits()
        if v <= v_max and a <= a_max:
            return poly
    raise ConfigurationError("could not satisfy the speed/acceleration limits")


# ---------------------------------------------------------------------------
# Flatness-based sampling
# ---------------------------------------------------------------------------

def _attitudes(acc: np.ndarray, vel: np.ndarray, g_W: np.ndarray, yaw_mode: str, yaw0: float) -> np.ndarray:
    if yaw_mode not in YAW_MODES:
        raise ConfigurationError(f"unknown yaw mode {yaw_mode!r}")
    thrust_dir = acc - g_W
    z_b = thrust_dir / np.linalg.norm(thrust_dir, axis=1, keepdims=True)
    yaw = np.full(len(acc), yaw0)
    if yaw_mode == "velocity":
        speed = np.linalg.norm(vel[:, :2], axis=1)
        last = yaw0
        for i in range(len(acc)):
            if speed[i] > 1e-3:
                last = np.arctan2(vel[i, 1], vel[i, 0])
            yaw[i] = last
    x_c = np.column_stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)])
    y_b = np.cross(z_b, x_c)
    y_b /= np.linalg.norm(y_b, axis=1, keepdims=True)
    x_b = np.cross(y_b, z_b)
    R = np.stack([x_b, y_b, z_b], axis=2)
    q = Rotation.from_matrix(R).as_quat()  # scalar-last
    return q[:, [3, 0, 1, 2]]


def _body_rates(q: np.ndarray, dt: float) -> np.ndarray:
    qc = q.copy()
    for i in range(1, len(qc)):
        if qc[i] @ qc[i - 1] < 0:
            qc[i] = -qc[i]
    if len(qc) < 2:
        return np.zeros((len(qc), 3))
    qdot = np.gradient(qc, dt, axis=0)
    return 2.0 * quat_mul(quat_conj(qc), qdot)[:, 1:]


def flat_reference(times, pos, vel, acc, quad: QuadParams, f_s: float, yaw_mode: str = "constant",
                   yaw0: float = 0.0, v_max: float = np.inf, name: str = "trajectory") -> SampledTrajectory:
    q = _attitudes(acc, vel, quad.g_W, yaw_mode, yaw0)
    w = _body_rates(q, 1.0 / f_s)
    q = quat_normalize(q)
    thrust = quad.m * np.linalg.norm(acc - quad.g_W, axis=1) / (4.0 * quad.T_max)
    u = np.tile(np.clip(thrust, 0.0, 1.0)[:, None], (1, NU))
    x = np.hstack([pos, q, vel, w])
    return SampledTrajectory(np.asarray(times, dtype=float), x, u, float(f_s), float(v_max), name)


def sample_trajectory(poly: PiecewisePolynomial, f_s: float, quad: QuadParams = QuadParams(),
                      yaw_mode: str = "constant", yaw0: float = 0.0, v_max: float = np.inf,
                      name: str = "random") -> SampledTrajectory:
    """Sample a spline at ``f_s`` and fill in attitude, body rates and feed-forward thrust."""
    n = int(np.floor(poly.duration * f_s + 1e-9)) + 1
    t = np.arange(n) / f_s
    return flat_reference(t, poly(t), poly(t, 1), poly(t, 2), quad, f_s, yaw_mode, yaw0, v_max, name)


def random_trajectory(v_max: float, a_max: float = 4.0, f_s: float = 100.0, hsize: float = 10.0, n_waypoints: int = 6,
                      seed: int = 0, quad: QuadParams = QuadParams(), yaw_mode: str = "constant") -> SampledTrajectory:
    poly = fit_polynomial(random_waypoints(hsize, n_waypoints, seed), v_max, a_max)
    return sample_trajectory(poly, f_s, quad, yaw_mode, v_max=v_max, name="random")


def circle_trajectory(r: float = 10.0, v_max: float = 6.0, f_s: float = 100.0, altitude: float = 10.0,
                      ramp_accel: float = 1.0, laps: float = 1.0, brake_accel: float | None = 3.0,
                      quad: QuadParams = QuadParams(), yaw_mode: str = "constant") -> SampledTrajectory:
    """Horizontal circle whose tangential speed ramps linearly from 0 to ``v_max``.

    After the ramp the speed is held for ``laps`` full revolutions, then the
    vehicle brakes to rest at ``brake_accel`` so that the reference ends in
    hover (``brake_accel=None`` ends abruptly at full speed).
    """
    if r <= 0 or v_max <= 0 or ramp_accel <= 0 or (brake_accel is not None and brake_accel <= 0):
        raise ConfigurationError("r, v_max, ramp_accel and brake_accel must be positive")
    t_ramp = v_max / ramp_accel
    t_hold = t_ramp + laps * 2.0 * np.pi * r / v_max
    t_end = t_hold + (v_max / brake_accel if brake_accel else 0.0)
    n = int(np.floor(t_end * f_s + 1e-9)) + 1
    t = np.arange(n) / f_s
    s_ramp = 0.5 * ramp_accel * t_ramp**2
    s_hold = s_ramp + v_max * (t_hold - t_ramp)
    tb = np.maximum(t - t_hold, 0.0)
    b = brake_accel or 0.0
    speed = np.select([t <= t_ramp, t <= t_hold], [ramp_accel * t, v_max], np.maximum(v_max - b * tb, 0.0))
    a_tan = np.select([t <= t_ramp, t <= t_hold], [ramp_accel, 0.0], -b)
    s = np.select(
        [t <= t_ramp, t <= t_hold],
        [0.5 * ramp_accel * t**2, s_ramp + v_max * (t - t_ramp)],
        s_hold + v_max * tb - 0.5 * b * tb**2,
    )
    th = s / r
    c, sn = np.cos(th), np.sin(th)
    z = np.zeros_like(t)
    pos = np.column_stack([r * c, r * sn, z + altitude])
    tangent = np.column_stack([-sn, c, z])
    normal = np.column_stack([c, sn, z])
    vel = speed[:, None] * tangent
    acc = a_tan[:, None] * tangent - (speed**2 / r)[:, None] * normal
    return flat_reference(t, pos, vel, acc, quad, f_s, yaw_mode, 0.0, v_max, "circle")


def hover_trajectory(position=(0.0, 0.0, 10.0), duration: float = 2.0, f_s: float = 100.0,
                     quad: QuadParams = QuadParams()) -> SampledTrajectory:
    n = int(np.floor(duration * f_s + 1e-9)) + 1
    t = np.arange(n) / f_s
    pos = np.tile(np.asarray(position, dtype=float), (n, 1))
    zero = np.zeros((n, 3))
    return flat_reference(t, pos, zero, zero, quad, f_s, "constant", 0.0, np.inf, "hover")
