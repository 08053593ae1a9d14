"""Plant simulation, the learn-and-control loop, episode logs and metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .augmented import RgpParamVector
from .drag import DragParams, check_profile, drag_field_vector
from .dynamics import (
    NU,
    NX,
    ConfigurationError,
    IntegrationError,
    QuadParams,
    QuadState,
    physics_vector,
    rk4_vector,
)
from .estimator import ResidualConfig, observe_states
from .mpc import MpcController, OcpConfig, ReferenceWindow, SolverError
from .rgp import KernelHyperparams, RgpEnsemble, ensemble_update, rgp_init
from .trajectory import SampledTrajectory

log = logging.getLogger(__name__)

VARIANTS = ("nominal", "gp", "rgp")


@dataclass(frozen=True)
class SimConfig:
    delta_t_sim: float = 0.001
    control_dt: float = 0.01
    drag_profile: str = "simplified"
    drag: DragParams = field(default_factory=DragParams)
    variant: str = "nominal"
    seed: int = 0
    quad: QuadParams = field(default_factory=QuadParams)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    rgp_m: int = 20
    rgp_hyper: KernelHyperparams = field(default_factory=KernelHyperparams)
    rgp_v_max: float | None = None
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    measurement_noise: float = 0.0

    def __post_init__(self):
        check_profile(self.drag_profile)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown controller variant {self.variant!r}")
        if self.delta_t_sim <= 0 or self.control_dt <= 0:
            raise ConfigurationError("time steps must be positive")
        ratio = self.control_dt / self.delta_t_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("control_dt must be an integer multiple of delta_t_sim")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.delta_t_sim))

    def to_dict(self) -> dict:
        return {
            "delta_t_sim": self.delta_t_sim,
            "control_dt": self.control_dt,
            "drag_profile": self.drag_profile,
            "drag": self.drag.to_dict(),
            "variant": self.variant,
            "seed": self.seed,
            "quad": self.quad.to_dict(),
            "ocp": asdict(self.ocp),
            "rgp_m": self.rgp_m,
            "rgp_hyper": asdict(self.rgp_hyper),
            "rgp_v_max": self.rgp_v_max,
            "residual": asdict(self.residual),
            "measurement_noise": self.measurement_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "drag" in d:
            d["drag"] = DragParams.from_dict(d["drag"])
        if "quad" in d:
            d["quad"] = QuadParams.from_dict(d["quad"])
        if "ocp" in d:
            d["ocp"] = OcpConfig.from_dict(d["ocp"])
        if "rgp_hyper" in d:
            h = d["rgp_hyper"]
            d["rgp_hyper"] = KernelHyperparams(**h) if isinstance(h, dict) else KernelHyperparams(*h)
        if "residual" in d:
            d["residual"] = ResidualConfig(**d["residual"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

def _plant_field(cfg: SimConfig):
    quad, drag, profile = cfg.quad, cfg.drag, cfg.drag_profile

    def f(x, u):
        dx = physics_vector(x, u, quad)
        if profile != "none":
            dx[7:10] += drag_field_vector(x, u, drag, quad.m, profile)
        return dx

    return f


def _physics_field(quad: QuadParams):
    def f(x, u):
        return physics_vector(x, u, quad)

    return f


def plant_step(x: QuadState, u, cfg: SimConfig) -> QuadState:
    """Advance the true plant (nominal physics plus drag) by ``delta_t_sim``."""
    u = np.asarray(u, dtype=float)
    return QuadState.from_vector(rk4_vector(_plant_field(cfg), x.as_vector(), u, cfg.delta_t_sim))


def _integrate(f, x: np.ndarray, u: np.ndarray, dt: float, n: int) -> np.ndarray:
    for _ in range(n):
        x = rk4_vector(f, x, u, dt)
    return x


# ---------------------------------------------------------------------------
# Episode log
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    t: np.ndarray
    x_ref: np.ndarray
    x_meas: np.ndarray
    u: np.ndarray
    a_tilde: np.ndarray
    v_obs: np.ndarray
    accepted: np.ndarray
    mu_hash: list
    mpc_mu_hash: list
    kkt: np.ndarray
    qp_failed: np.ndarray
    n_active: np.ndarray
    solve_time: np.ndarray
    header: dict = field(default_factory=dict)
    initial_ensemble: RgpEnsemble | None = None
    final_ensemble: RgpEnsemble | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def failed(self) -> bool:
        return bool(self.header.get("failed", False))

    @property
    def rejected(self) -> int:
        return int(np.count_nonzero(~self.accepted))

    def observations(self, accepted_only: bool = True) -> np.ndarray:
        """``(n, 6)`` array of ``[v_B, a_tilde]`` rows."""
        obs = np.hstack([self.v_obs, self.a_tilde])
        return obs[self.accepted] if accepted_only else obs

    CSV_NUMERIC = ("t", "x_ref", "x_meas", "u", "a_tilde", "v_obs", "accepted", "kkt", "qp_failed", "n_active")

    def _csv_header(self) -> list[str]:
        names = ["t"]
        for prefix in ("ref", "meas"):
            names += [f"{prefix}_{c}" for c in ("px py pz qw qx qy qz vx vy vz wx wy wz".split())]
        names += [f"u{i}" for i in range(NU)]
        names += ["ax", "ay", "az", "obs_vx", "obs_vy", "obs_vz", "accepted", "kkt", "qp_failed", "n_active"]
        names += ["mu_hash", "mpc_mu_hash"]
        return names

    def save(self, stem) -> tuple[Path, Path, Path]:
        """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>_timing.csv``.

        The CSV and JSON are fully deterministic; wall-clock timings go to the
        separate timing file.
        """
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path = stem.with_suffix(".csv")
        num = np.column_stack(
            [
                self.t,
                self.x_ref,
                self.x_meas,
                self.u,
                self.a_tilde,
                self.v_obs,
                self.accepted.astype(float),
                self.kkt,
                self.qp_failed.astype(float),
                self.n_active.astype(float),
            ]
        )
        lines = [",".join(self._csv_header())]
        for row, h1, h2 in zip(num, self.mu_hash, self.mpc_mu_hash):
            lines.append(",".join(repr(float(v)) for v in row) + f",{h1},{h2}")
        csv_path.write_text("\n".join(lines) + "\n")
        json_path = stem.with_suffix(".json")
        json_path.write_text(json.dumps(self.header, indent=1, sort_keys=True))
        timing_path = stem.parent / (stem.name + "_timing.csv")
        timing_path.write_text("solve_time_s\n" + "\n".join(repr(float(s)) for s in self.solve_time) + "\n")
        return csv_path, json_path, timing_path

    @classmethod
    def load(cls, stem) -> "EpisodeLog":
        stem = Path(stem)
        lines = stem.with_suffix(".csv").read_text().splitlines()[1:]
        rows = [ln.split(",") for ln in lines]
        num = np.array([[float(v) for v in r[:-2]] for r in rows]).reshape(len(rows), -1)
        header = json.loads(stem.with_suffix(".json").read_text())
        timing_path = stem.parent / (stem.name + "_timing.csv")
        solve_time = np.zeros(len(rows))
        if timing_path.exists():
            solve_time = np.loadtxt(timing_path, skiprows=1, ndmin=1)
        c = 0

        def take(n):
            nonlocal c
            out = num[:, c : c + n]
            c += n
            return out

        t = take(1)[:, 0]
        x_ref, x_meas, u = take(NX), take(NX), take(NU)
        a_tilde, v_obs = take(3), take(3)
        accepted = take(1)[:, 0].astype(bool)
        kkt = take(1)[:, 0]
        qp_failed = take(1)[:, 0].astype(bool)
        n_active = take(1)[:, 0].astype(int)
        return cls(t, x_ref, x_meas, u, a_tilde, v_obs, accepted, [r[-2] for r in rows], [r[-1] for r in rows],
                   kkt, qp_failed, n_active, solve_time, header)


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def run_episode(traj: SampledTrajectory, cfg: SimConfig, gp_model: RgpEnsemble | None = None,
                x0: QuadState | None = None) -> EpisodeLog:
    """Run the measure / solve / apply / learn loop along ``traj``.

    ``gp_model`` supplies the fixed drag model for the ``gp`` variant.
    """
    if abs(traj.f_s * cfg.control_dt - 1.0) > 1e-9:
        raise ConfigurationError("trajectory sample rate must equal 1 / control_dt")
    if cfg.variant == "gp" and gp_model is None:
        raise ConfigurationError("the gp variant needs a pre-trained model")
    quad = cfg.quad
    n = len(traj)
    stride = int(round(cfg.ocp.T_h / cfg.control_dt))
    rng = np.random.default_rng(cfg.seed)

    v_max = cfg.rgp_v_max or (traj.v_max if np.isfinite(traj.v_max) else 1.0)
    ens = rgp_init(v_max, cfg.rgp_m, cfg.rgp_hyper) if cfg.variant == "rgp" else gp_model
    initial_ens = ens
    rp = RgpParamVector.from_ensemble(ens) if ens is not None else RgpParamVector.zeros(v_max, cfg.rgp_m, cfg.rgp_hyper)
    if cfg.variant == "nominal":
        rp = RgpParamVector.zeros(v_max, cfg.rgp_m, cfg.rgp_hyper)
    ctrl = MpcController(quad, cfg.ocp, rp, cfg.control_dt)

    plant = _plant_field(cfg)
    nominal = _physics_field(quad)
    h, nsub = cfg.delta_t_sim, cfg.substeps

    out = {
        "x_meas": np.full((n, NX), np.nan),
        "u": np.full((n, NU), np.nan),
        "a_tilde": np.zeros((n, 3)),
        "v_obs": np.zeros((n, 3)),
        "accepted": np.zeros(n, dtype=bool),
        "kkt": np.full(n, np.nan),
        "qp_failed": np.zeros(n, dtype=bool),
        "n_active": np.zeros(n, dtype=int),
        "solve_time": np.zeros(n),
    }
    mu_hash = [""] * n
    mpc_hash = [""] * n
    x = (x0.as_vector() if x0 is not None else traj.x_ref[0]).copy()
    failed, message, steps = False, "", n
    for k in range(n):
        t = traj.times[k]
        x_meas = x.copy()
        if cfg.measurement_noise > 0:
            x_meas[0:3] += rng.normal(0.0, cfg.measurement_noise, 3)
            x_meas[7:10] += rng.normal(0.0, cfg.measurement_noise, 3)
        xr, ur = traj.window(k, cfg.ocp.n_h, stride)
        try:
            mpc_hash[k] = ctrl.rp.digest
            t0 = time.perf_counter()
            sol = ctrl.solve(x_meas, ReferenceWindow(xr, ur))
            elapsed = time.perf_counter() - t0
            u = np.clip(sol.u_traj[0], 0.0, 1.0)
            x_next = _integrate(plant, x, u, h, nsub)
            x_hat = _integrate(nominal, x_meas, u, h, nsub)
            obs = observe_states(QuadState.from_vector(x_next), QuadState.from_vector(x_hat), cfg.control_dt,
                                 t + cfg.control_dt, cfg.residual)
            if obs is not None and cfg.variant == "rgp":
                t0 = time.perf_counter()
                ens = ensemble_update(ens, obs)
                ctrl.update_rgp_params(RgpParamVector.from_ensemble(ens))
                elapsed += time.perf_counter() - t0
            # controller-side cost per step: one RTI solve plus the parameter update
            out["solve_time"][k] = elapsed
        except (SolverError, IntegrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failed, message, steps = True, f"step {k}: {exc}", k
            log.warning("episode aborted at step %d: %s", k, exc)
            break
        out["x_meas"][k] = x_meas
        out["u"][k] = u
        out["kkt"][k] = sol.kkt_residual
        out["qp_failed"][k] = sol.qp_failed
        out["n_active"][k] = sol.n_active
        if obs is not None:
            out["a_tilde"][k] = obs.a_tilde
            out["v_obs"][k] = obs.v_B
            out["accepted"][k] = True
        mu_hash[k] = ctrl.rp.digest
        x = x_next

    header = {
        "trajectory": traj.name,
        "v_max": traj.v_max,
        "n_steps": n,
        "completed_steps": steps,
        "failed": failed,
        "message": message,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
    }
    return EpisodeLog(
        t=traj.times.copy(),
        x_ref=traj.x_ref.copy(),
        mu_hash=mu_hash,
        mpc_mu_hash=mpc_hash,
        header=header,
        initial_ensemble=initial_ens,
        final_ensemble=ens,
        **out,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(log: EpisodeLog) -> dict:
    """Tracking RMSE (mm), |cov(v_d, e_d)| per axis, peak speed and mean solve time (ms).

    ``cov_v_e_*`` pairs the error with the commanded (reference) velocity.
    With the measured velocity ``v = v_ref + de/dt`` the covariance picks up
    ``cov(de/dt, e)``, which telescopes to a boundary term in the first and
    last error; that variant is still reported as ``cov_vmeas_e_*``.
    """
    valid = np.all(np.isfinite(log.x_meas), axis=1)
    if len(log) == 0 or not np.any(valid):
        raise ValueError("cannot compute metrics of an empty log")
    e = log.x_meas[valid, 0:3] - log.x_ref[valid, 0:3]
    v = log.x_meas[valid, 7:10]
    v_ref = log.x_ref[valid, 7:10]
    rmse_axes = np.sqrt(np.mean(e**2, axis=0)) * 1e3
    rmse = float(np.sqrt(np.mean(np.sum(e**2, axis=1))) * 1e3)
    de = e - e.mean(axis=0)
    cov = np.abs(np.mean((v_ref - v_ref.mean(axis=0)) * de, axis=0))
    cov_meas = np.abs(np.mean((v - v.mean(axis=0)) * de, axis=0))
    return {
        "rmse_pos_mm": rmse,
        "rmse_x_mm": float(rmse_axes[0]),
        "rmse_y_mm": float(rmse_axes[1]),
        "rmse_z_mm": float(rmse_axes[2]),
        "cov_v_e_x": float(cov[0]),
        "cov_v_e_y": float(cov[1]),
        "cov_v_e_z": float(cov[2]),
        "cov_vmeas_e_x": float(cov_meas[0]),
        "cov_vmeas_e_y": float(cov_meas[1]),
        "cov_vmeas_e_z": float(cov_meas[2]),
        "v_peak": float(np.max(np.linalg.norm(v, axis=1))),
        "mean_solve_time_ms": float(np.mean(log.solve_time[valid]) * 1e3),
        "steps": int(np.count_nonzero(valid)),
        "rejected": int(np.count_nonzero(~log.accepted[valid])),
    }
