"""Experiment grids: trajectory x v_max x variant sweeps and their reports.

Every number in the aggregate tables is recomputed from the per-episode logs
on disk, so ``build_report`` can be rerun on an output directory at any time.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ConfigurationError
from .rgp import (
    DragObservation,
    RgpEnsemble,
    batch_gp_fit,
    ensemble_update,
    load_posterior,
    rgp_init,
    save_posterior,
)
from .sim import VARIANTS, EpisodeLog, SimConfig, compute_metrics, run_episode
from .trajectory import SampledTrajectory, circle_trajectory, random_trajectory

log = logging.getLogger(__name__)

TRAJECTORY_KINDS = ("random", "circle", "file")
CIRCLE_OPTIONS = {"r", "altitude", "ramp_accel", "laps", "brake_accel", "yaw_mode"}
RANDOM_OPTIONS = {"a_max", "hsize", "n_waypoints", "yaw_mode"}


@dataclass
class ExperimentSpec:
    """One experiment grid plus every module configuration it needs.

    ``trajectory_options`` are forwarded to the trajectory generator.  For
    ``trajectory="file"`` the grid has a single speed taken from the file.
    The ``gp`` variant is trained on a nominal episode over a separate random
    trajectory (``gp_training``: ``v_max`` defaults to the largest grid speed,
    the trajectory seed is ``seed + seed_offset``).
    """

    trajectory: str = "circle"
    v_max: list = field(default_factory=lambda: [6.0])
    variants: list = field(default_factory=lambda: ["nominal", "rgp"])
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    trajectory_file: str | None = None
    trajectory_options: dict = field(default_factory=dict)
    gp_training: dict = field(default_factory=dict)
    sim: SimConfig = field(default_factory=SimConfig)
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.sim, dict):
            self.sim = SimConfig.from_dict(self.sim)
        self.v_max = [float(v) for v in np.atleast_1d(self.v_max)]
        self.seeds = [int(s) for s in np.atleast_1d(self.seeds)]
        self.variants = list(self.variants)
        self.validate()

    def validate(self) -> None:
        if self.trajectory not in TRAJECTORY_KINDS:
            raise ConfigurationError(f"trajectory must be one of {TRAJECTORY_KINDS}")
        if not self.variants or not self.seeds or (self.trajectory != "file" and not self.v_max):
            raise ConfigurationError("experiment grid is empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigurationError(f"unknown variants {bad}")
        if any(v <= 0 for v in self.v_max):
            raise ConfigurationError("v_max values must be positive")
        if self.trajectory == "file":
            if not self.trajectory_file or not Path(self.trajectory_file).is_file():
                raise ConfigurationError(f"trajectory file not found: {self.trajectory_file!r}")
        allowed = CIRCLE_OPTIONS if self.trajectory == "circle" else RANDOM_OPTIONS
        if self.trajectory != "file" and set(self.trajectory_options) - allowed:
            raise ConfigurationError(f"unsupported trajectory options {sorted(set(self.trajectory_options) - allowed)}")
        unknown = set(self.gp_training) - {"v_max", "seed_offset", "m"}
        if unknown:
            raise ConfigurationError(f"unknown gp_training keys {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    def to_dict(self) -> dict:
        return {
            "trajectory": self.trajectory,
            "v_max": self.v_max,
            "variants": self.variants,
            "seeds": self.seeds,
            "output_dir": str(self.output_dir),
            "trajectory_file": self.trajectory_file,
            "trajectory_options": dict(self.trajectory_options),
            "gp_training": dict(self.gp_training),
            "sim": self.sim.to_dict(),
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**d)


def percent_of(value: float, base: float | None) -> str:
    """Ratio ``value / base`` as a whole-number percentage string, e.g. ``"41%"``."""
    return f"{100.0 * value / base:.0f}%" if base else ""


def episode_stem(traj: str, v_max: float, variant: str, seed: int) -> str:
    return f"{traj}_{v_max:g}_{variant}_{seed}"


def make_trajectory(kind: str, v_max: float, seed: int, sim: SimConfig, options: dict | None = None,
                    path=None) -> SampledTrajectory:
    options = dict(options or {})
    f_s = 1.0 / sim.control_dt
    if kind == "circle":
        return circle_trajectory(v_max=v_max, f_s=f_s, quad=sim.quad, **options)
    if kind == "random":
        return random_trajectory(v_max=v_max, f_s=f_s, seed=seed, quad=sim.quad, **options)
    if kind == "file":
        return SampledTrajectory.from_csv(path)
    raise ConfigurationError(f"unknown trajectory kind {kind!r}")


def train_gp(sim: SimConfig, v_max: float, seed: int, m: int | None = None, log_stem=None) -> RgpEnsemble:
    """Fit the fixed-parameter GP baseline on residuals of a nominal episode.

    The training episode flies a random trajectory with the given speed
    limit and seed; each body axis gets its own sparse GP.
    """
    traj = random_trajectory(v_max=v_max, f_s=1.0 / sim.control_dt, seed=seed, quad=sim.quad)
    cfg = SimConfig.from_dict({**sim.to_dict(), "variant": "nominal", "seed": seed})
    train_log = run_episode(traj, cfg)
    if log_stem is not None:
        train_log.save(log_stem)
    obs = train_log.observations()
    m = m or sim.rgp_m
    dims = tuple(batch_gp_fit(obs[:, [d, 3 + d]], m, sim.rgp_hyper) for d in range(3))
    return RgpEnsemble(dims)


def replay_posterior(episode: EpisodeLog) -> RgpEnsemble:
    """Rebuild the RGP posterior of an ``rgp`` episode from its logged observations.

    Applies the accepted observations in log order to a fresh ensemble
    configured from the log header, reproducing the in-loop posterior
    exactly.
    """
    cfg = SimConfig.from_dict(episode.header["config"])
    if cfg.variant != "rgp":
        raise ConfigurationError("posterior replay only applies to rgp episodes")
    v_max = cfg.rgp_v_max or episode.header.get("v_max") or 1.0
    if not np.isfinite(v_max):
        v_max = 1.0
    ens = rgp_init(v_max, cfg.rgp_m, cfg.rgp_hyper)
    for k in np.flatnonzero(episode.accepted):
        ens = ensemble_update(ens, DragObservation(episode.v_obs[k], episode.a_tilde[k], float(episode.t[k])))
    return ens


def export_posterior(ens: RgpEnsemble, path, observations=None) -> Path:
    """Write a posterior snapshot (basis, means, 2-std band, optional observation scatter) as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return save_posterior(ens, path, observations)


def _run_job(job: dict) -> dict:
    traj: SampledTrajectory = job["traj"]
    cfg: SimConfig = job["cfg"]
    stem = Path(job["stem"])
    gp_model = load_posterior(job["gp_model"]) if job.get("gp_model") else None
    t0 = time.perf_counter()
    try:
        episode = run_episode(traj, cfg, gp_model=gp_model)
    except Exception as exc:  # the suite records the failure and moves on
        log.error("episode %s raised: %s", stem.name, exc)
        return {"stem": stem.name, "failed": True, "message": f"{type(exc).__name__}: {exc}", "files": [],
                "wall_time_s": time.perf_counter() - t0}
    wall = time.perf_counter() - t0
    files = [str(p) for p in episode.save(stem)]
    if episode.initial_ensemble is not None:
        start = stem.parent / f"{stem.name}_posterior_start.json"
        end = stem.parent / f"{stem.name}_posterior_end.json"
        export_posterior(episode.initial_ensemble, start)
        export_posterior(episode.final_ensemble, end, episode.observations())
        files += [str(start), str(end)]
    return {"stem": stem.name, "failed": episode.failed, "message": episode.header.get("message", ""), "files": files,
            "wall_time_s": wall}


def run_suite(spec: ExperimentSpec) -> dict:
    """Run every grid cell, then write the aggregate reports.

    Returns the report index (also written to ``index.json``).  Failed
    episodes are recorded and the suite carries on.
    """
    out = Path(spec.output_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True))

    gp_models = {}
    if "gp" in spec.variants:
        gp_v_max = float(spec.gp_training.get("v_max") or max(spec.v_max or [6.0]))
        offset = int(spec.gp_training.get("seed_offset", 1000))
        for seed in spec.seeds:
            path = out / "models" / f"gp_seed{seed}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            model = train_gp(spec.sim, gp_v_max, seed + offset, spec.gp_training.get("m"),
                             log_stem=out / "models" / f"gp_training_seed{seed}")
            export_posterior(model, path)
            gp_models[seed] = str(path)

    jobs = []
    speeds = spec.v_max if spec.trajectory != "file" else [None]
    for seed in spec.seeds:
        for v_max in speeds:
            traj = make_trajectory(spec.trajectory, v_max, seed, spec.sim, spec.trajectory_options, spec.trajectory_file)
            v_label = traj.v_max if v_max is None else v_max
            for variant in spec.variants:
                cfg = SimConfig.from_dict({**spec.sim.to_dict(), "variant": variant, "seed": seed})
                stem = out / "logs" / episode_stem(traj.name, v_label, variant, seed)
                jobs.append({"traj": traj, "cfg": cfg, "stem": str(stem), "gp_model": gp_models.get(seed)
                             if variant == "gp" else None})

    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]

    episodes = [
        {k: r[k] for k in ("stem", "failed", "message", "files", "wall_time_s")} for r in results
    ]
    index = {"episodes": episodes, "gp_models": gp_models}
    (out / "episodes.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return build_report(out)


def _load_episodes(out: Path) -> list[tuple[dict, EpisodeLog]]:
    entries = json.loads((out / "episodes.json").read_text())["episodes"]
    loaded = []
    for e in entries:
        stem = out / "logs" / e["stem"]
        if e["failed"] and not stem.with_suffix(".csv").exists():
            loaded.append((e, None))
        else:
            loaded.append((e, EpisodeLog.load(stem)))
    return loaded


def build_report(out) -> dict:
    """Recompute ``table.csv``, ``covariance.csv`` and ``index.json`` from the logs in ``out``."""
    out = Path(out)
    loaded = _load_episodes(out)
    rows = []
    for entry, episode in loaded:
        if episode is None or episode.failed:
            continue
        h = episode.header
        m = compute_metrics(episode)
        rows.append({"trajectory": h["trajectory"], "v_max": float(h["v_max"]), "seed": int(h["seed"]),
                     "variant": h["config"]["variant"], **m})

    variants = [v for v in VARIANTS if any(r["variant"] == v for r in rows)]
    cells = sorted({(r["trajectory"], r["v_max"], r["seed"]) for r in rows})
    table_path = out / "table.csv"
    with table_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "v_max", "seed"] + [f"{v}_{c}" for v in variants for c in ("rmse_mm", "pct")])
        for traj, v_max, seed in cells:
            by_var = {r["variant"]: r for r in rows if (r["trajectory"], r["v_max"], r["seed"]) == (traj, v_max, seed)}
            base = by_var.get("nominal", {}).get("rmse_pos_mm")
            line = [traj, f"{v_max:g}", seed]
            for v in variants:
                if v not in by_var:
                    line += ["", ""]
                    continue
                rmse = by_var[v]["rmse_pos_mm"]
                line += [f"{rmse:.4f}", percent_of(rmse, base)]
            w.writerow(line)

    cov_path = out / "covariance.csv"
    cov_cols = ["cov_v_e_x", "cov_v_e_y", "cov_v_e_z", "cov_vmeas_e_x", "cov_vmeas_e_y", "cov_vmeas_e_z"]
    with cov_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "v_max", "seed", "variant", "v_peak"] + cov_cols)
        for r in sorted(rows, key=lambda r: (r["trajectory"], r["v_max"], r["seed"], VARIANTS.index(r["variant"]))):
            w.writerow([r["trajectory"], f"{r['v_max']:g}", r["seed"], r["variant"], repr(r["v_peak"])]
                       + [repr(r[c]) for c in cov_cols])

    episodes = [
        {"stem": e["stem"], "failed": bool(e["failed"] or (ep is not None and ep.failed)), "message": e["message"],
         "files": e["files"], "wall_time_s": e.get("wall_time_s")}
        for e, ep in loaded
    ]
    index = {
        "all_succeeded": not any(e["failed"] for e in episodes),
        "episodes": episodes,
        "table": str(table_path),
        "covariance": str(cov_path),
        "config": str(out / "config.json"),
        "gp_models": json.loads((out / "episodes.json").read_text()).get("gp_models", {}),
    }
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return index


def read_table(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))
