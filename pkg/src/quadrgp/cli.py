"""Command-line driver: ``quadrgp {gen-traj,run,suite,export-posterior,report}``.

Every subcommand reads one JSON experiment config (``--config``); individual
fields can be overridden with dedicated flags or ``--set dotted.key=value``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dynamics import ConfigurationError
from .experiment import (
    ExperimentSpec,
    build_report,
    episode_stem,
    export_posterior,
    make_trajectory,
    read_table,
    replay_posterior,
    run_suite,
)
from .rgp import load_posterior, rgp_init
from .sim import EpisodeLog, SimConfig, compute_metrics, run_episode

log = logging.getLogger("quadrgp")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = _parse_value(value)


def load_spec(args) -> ExperimentSpec:
    """Config file, then explicit flags, then ``--set`` assignments."""
    cfg: dict = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
    flag_map = {
        "trajectory": "trajectory",
        "trajectory_file": "trajectory_file",
        "v_max": "v_max",
        "variants": "variants",
        "seeds": "seeds",
        "output": "output_dir",
        "workers": "workers",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "trajectory_file", None) and "trajectory" not in cfg:
        cfg["trajectory"] = "file"
    for assignment in getattr(args, "set", None) or []:
        _apply_set(cfg, assignment)
    return ExperimentSpec.from_dict(cfg)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. sim.ocp.q_pos=20 (repeatable)")


def cmd_gen_traj(args) -> int:
    spec = load_spec(args)
    if spec.trajectory == "file":
        raise ConfigurationError("gen-traj generates circle or random trajectories")
    traj = make_trajectory(spec.trajectory, spec.v_max[0], spec.seeds[0], spec.sim, spec.trajectory_options)
    traj.validate()
    path = traj.to_csv(args.out)
    print(f"wrote {len(traj)} samples ({traj.duration:.2f} s) to {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = load_spec(args)
    variant = args.variant or spec.variants[0]
    seed = spec.seeds[0]
    traj = make_trajectory(spec.trajectory, spec.v_max[0], seed, spec.sim, spec.trajectory_options,
                           spec.trajectory_file)
    cfg = SimConfig.from_dict({**spec.sim.to_dict(), "variant": variant, "seed": seed})
    gp_model = load_posterior(args.gp_model) if args.gp_model else None
    episode = run_episode(traj, cfg, gp_model=gp_model)
    stem = Path(args.out) if args.out else Path(spec.output_dir) / episode_stem(traj.name, traj.v_max, variant, seed)
    episode.save(stem)
    summary = {"log": str(stem), "failed": episode.failed, "message": episode.header["message"]}
    if episode.header["completed_steps"] > 0:
        summary.update(compute_metrics(episode))
    print(json.dumps(summary, indent=1))
    return EXIT_FAILED if episode.failed else EXIT_OK


def cmd_suite(args) -> int:
    spec = load_spec(args)
    index = run_suite(spec)
    _print_table(index["table"])
    for e in index["episodes"]:
        if e["failed"]:
            print(f"FAILED {e['stem']}: {e['message']}", file=sys.stderr)
    print(f"report index: {Path(spec.output_dir) / 'index.json'}")
    return EXIT_OK if index["all_succeeded"] else EXIT_FAILED


def cmd_export_posterior(args) -> int:
    episode = EpisodeLog.load(args.log)
    if args.at == "start":
        cfg = SimConfig.from_dict(episode.header["config"])
        ens = rgp_init(cfg.rgp_v_max or episode.header["v_max"], cfg.rgp_m, cfg.rgp_hyper)
        obs = None
    else:
        ens = replay_posterior(episode)
        obs = episode.observations()
    path = export_posterior(ens, args.out, obs)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    index = build_report(args.dir)
    _print_table(index["table"])
    return EXIT_OK if index["all_succeeded"] else EXIT_FAILED


def _print_table(path) -> None:
    rows = read_table(path)
    if not rows:
        print("(no successful episodes)")
        return
    cols = list(rows[0])
    widths = [max(len(c), *(len(r[c]) for r in rows)) for c in cols]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(r[c].ljust(w) for c, w in zip(cols, widths)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadrgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traj", help="generate a reference trajectory CSV")
    _add_common(p)
    p.add_argument("--trajectory", choices=["circle", "random"])
    p.add_argument("--v-max", type=float, nargs=1, dest="v_max")
    p.add_argument("--seeds", type=int, nargs=1, metavar="SEED")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_traj)

    p = sub.add_parser("run", help="run a single episode")
    _add_common(p)
    p.add_argument("--trajectory", choices=["circle", "random", "file"])
    p.add_argument("--trajectory-file")
    p.add_argument("--v-max", type=float, nargs=1, dest="v_max")
    p.add_argument("--variant", choices=["nominal", "gp", "rgp"])
    p.add_argument("--seeds", type=int, nargs=1, metavar="SEED")
    p.add_argument("--gp-model", help="posterior JSON for the gp variant")
    p.add_argument("--output", help="output directory (ignored when --out is given)")
    p.add_argument("--out", help="log path stem")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run an experiment grid and write reports")
    _add_common(p)
    p.add_argument("--trajectory", choices=["circle", "random", "file"])
    p.add_argument("--trajectory-file")
    p.add_argument("--v-max", type=float, nargs="+", dest="v_max")
    p.add_argument("--variants", nargs="+", choices=["nominal", "gp", "rgp"])
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--output", help="output directory")
    p.add_argument("--workers", type=int, help="episodes run in parallel")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("export-posterior", help="write an rgp episode's posterior snapshot")
    p.add_argument("--log", required=True, help="log path stem of an rgp episode")
    p.add_argument("--at", choices=["start", "end"], default="end")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_posterior)

    p = sub.add_parser("report", help="rebuild tables and the index from a suite directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
