"""``dockrl`` command line: train, evaluate, rollout, lqr-design.

Exit codes: 0 success, 1 usage error, 2 configuration or checkpoint error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import CONFIG_DIR_ENV, ConfigError, RunConfig, default_config, load_config, parse_config
from .evaluation import export_trajectory, monte_carlo, trajectory_stats
from .lqr import DesignFileError, NumericalFailure, save_design, simulate_reference, tune_gain
from .ppo import NonFiniteUpdate
from .quaternion import InvalidInputError
from .rollout import (STREAM_MONTE_CARLO, draw_episode, episode_rng, lqr_tracking_controller,
                      rollout_batch)
from .scenario import initial_state_from_sample
from .trainer import ResumeError, Trainer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("dockrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load(args) -> tuple[RunConfig, Path | None]:
    if args.config:
        path = Path(args.config)
        return load_config(path), path.parent
    return default_config(), None


def _checked_snapshot(path, cfg: RunConfig | None):
    """Load a checkpoint and the config it must be evaluated under."""
    doc = load_checkpoint(path)
    if cfg is None:
        if not doc.get("config"):
            raise CheckpointError(f"{path}: checkpoint carries no config; pass --config")
        cfg = parse_config(json.dumps(doc["config"]), f"{path}:config")
    if cfg.config_hash() != doc["config_hash"]:
        raise ResumeError(f"{path}: checkpoint config hash does not match the given config")
    return doc["snapshot"], cfg


# -- subcommands -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, base = _load(args)
    run = cfg.run.model_copy(update={k: v for k, v in (
        ("seed", args.seed), ("workers", args.workers), ("episode_budget", args.budget),
        ("checkpoint_dir", args.checkpoint_dir)) if v is not None})
    if run.workers < 1 or run.episode_budget < 1:
        raise UsageError("--workers and --budget must be positive")
    cfg = cfg.model_copy(update={"run": run})
    out = Path(run.checkpoint_dir)
    if args.resume or args.resume_from:
        trainer = Trainer.resume(cfg, out, args.resume_from, base_dir=base)
        log.info("resuming at update %d (%d episodes)", trainer.state.update + 1, trainer.state.episodes)
    else:
        if (out / "train_log.csv").exists():
            raise UsageError(f"{out} already holds a training run; use --resume or another --checkpoint-dir")
        trainer = Trainer(cfg, out, base_dir=base)
    state = trainer.run(run.episode_budget)
    print(f"trained {state.update} updates, {state.episodes} episodes; "
          f"best corner-case docks {state.best_corner} (update {state.best_update}); outputs in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, base = _load(args) if args.config else (None, None)
    snapshot, cfg = _checked_snapshot(args.checkpoint, cfg)
    if args.n < 0 or args.export_trajectories < 0:
        raise UsageError("-n and --export-trajectories must be non-negative")
    seed = cfg.run.seed if args.seed is None else args.seed
    task = cfg.task(base)
    report, records = monte_carlo(snapshot, task, args.n, seed, keep_records=args.export_trajectories)
    out = Path(args.output)
    report_path, _ = report.write(out)
    for i, ep in zip(report.indices, records):
        export_trajectory(ep, task.scenario, out / f"trajectory_{i:04d}.csv")
    s = report.summary()
    if report.no_data:
        print(f"no trials run; report in {report_path}")
    else:
        mean_len = (s["successful_trials"] or s["all_trials"])["duration_s"]["mean"]
        print(f"{report.successes}/{report.n} docked ({100 * report.success_fraction:.1f}%), "
              f"mean duration {mean_len:.2f} s; report in {report_path}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    if args.controller == "policy" and not args.checkpoint:
        raise UsageError("--checkpoint is required unless --controller lqr")
    cfg, base = _load(args) if args.config or args.controller == "lqr" else (None, None)
    snapshot = None
    if args.controller == "policy":
        snapshot, cfg = _checked_snapshot(args.checkpoint, cfg)
    task = cfg.task(base)
    sc = task.scenario
    steps = sc.max_steps(training=args.training)
    ic_range = sc.ic_train if args.training else sc.ic_test
    seed = cfg.run.seed if args.seed is None else args.seed
    if args.nominal:
        lo, hi = ic_range.bounds()
        x0 = initial_state_from_sample(0.5 * (lo + hi))
        noise = np.random.default_rng([seed, STREAM_MONTE_CARLO, args.index]).standard_normal((steps, 6))
    else:
        x0, noise = draw_episode(episode_rng(seed, STREAM_MONTE_CARLO, args.index), ic_range, steps, True)
    stochastic = args.stochastic and args.controller == "policy"
    controller = lqr_tracking_controller(task) if args.controller == "lqr" else None
    ep = rollout_batch(snapshot, task, x0[None], noise[None] if stochastic else None, steps,
                       stochastic, controller)[0]
    path = export_trajectory(ep, sc, args.output)
    st = trajectory_stats(ep, task)
    print(f"{ep.termination} after {st.duration_s:g} s, score {ep.score:.2f}; trajectory in {path}")
    return EXIT_OK


def cmd_lqr_design(args) -> int:
    cfg, _ = _load(args)
    sc = cfg.scenario_config()
    lq = cfg.lqr
    target = lq.target_arrival_s if args.target is None else args.target
    tol = lq.tolerance_s if args.tolerance is None else args.tolerance
    result = tune_gain(sc.docked_com_position(), lq.nominal_r0_m, lq.nominal_v0_mps, target_time=target,
                       tolerance=tol, dt=sc.dt, t_max=lq.tuning_horizon_s,
                       origin_offset=lq.origin_offset_m, position_tol=sc.docking.r_p_tol)
    ref = simulate_reference(result.design, lq.nominal_r0_m, lq.nominal_v0_mps, sc.dt, lq.tuning_horizon_s,
                             sc.docking.r_p_tol)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    k = ref.arrival_step
    save_design(out / "lqr_gain.yaml", result, {
        "target_arrival_s": target, "tolerance_s": tol,
        "terminal_vx_mps": float(ref.v[k, 0]),
        "max_reference_accel_mps2": float(np.max(np.abs(ref.a))),
    })
    ref.to_csv(out / "reference.csv")
    print(f"arrival {result.arrival_time:g} s (target {target:g} +/- {tol:g}), "
          f"position-weight scale {result.scale:.6g}, arrival v_x {ref.v[k, 0]:.4f} m/s; "
          f"gain in {out / 'lqr_gain.yaml'}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dockrl", description="Six-degree-of-freedom docking with PPO.",
                epilog=f"Without --config the default scenario is used (override its directory with ${CONFIG_DIR_ENV}).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run PPO training")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--budget", type=int, help="episode budget")
    t.add_argument("--checkpoint-dir")
    t.add_argument("--resume", action="store_true", help="continue from latest.json in the checkpoint dir")
    t.add_argument("--resume-from", help="continue from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="Monte Carlo test of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="defaults to the config stored in the checkpoint")
    e.add_argument("-n", "--trials", dest="n", type=int, default=1000)
    e.add_argument("--seed", type=int)
    e.add_argument("--output", default="eval")
    e.add_argument("--export-trajectories", type=int, default=0, metavar="K",
                   help="write CSVs for the first K trials")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rollout", help="simulate one episode and export it as CSV")
    r.add_argument("--checkpoint")
    r.add_argument("--config")
    r.add_argument("--controller", choices=("policy", "lqr"), default="policy",
                   help="lqr applies the reference acceleration with zero torque")
    r.add_argument("--seed", type=int)
    r.add_argument("--index", type=int, default=0, help="trial index within the seed's stream")
    r.add_argument("--nominal", action="store_true", help="start at the centre of the range")
    r.add_argument("--training", action="store_true", help="training range and time limit")
    r.add_argument("--stochastic", action="store_true", help="sample actions instead of the mean")
    r.add_argument("--output", default="trajectory.csv")
    r.set_defaults(func=cmd_rollout)

    d = sub.add_parser("lqr-design", help="tune the LQR reference gain")
    d.add_argument("--config")
    d.add_argument("--target", type=float, help="arrival time in s")
    d.add_argument("--tolerance", type=float)
    d.add_argument("--output", default="lqr")
    d.set_defaults(func=cmd_lqr_design)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dockrl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, ResumeError, DesignFileError, InvalidInputError) as exc:
        print(f"dockrl: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NonFiniteUpdate, FloatingPointError) as exc:
        print(f"dockrl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"dockrl: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
