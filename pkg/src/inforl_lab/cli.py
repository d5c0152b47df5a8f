"""Command line entry point.

    inforl train --config PATH [--seed N] [--out DIR] [--set key=value ...]
    inforl resume --checkpoint PATH [--out DIR] [--set run.iterations=N]
    inforl eval-sweep --checkpoint PATH [--out DIR]
    inforl eval-schedule --checkpoint PATH [--out DIR]
    inforl eval-confusion --checkpoint PATH [--out DIR]
    inforl dump-trajectory --checkpoint PATH --code C [--out DIR]

Exit codes: 0 success, 1 usage/config error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import evaluation, svg
from .config import RunConfig, preset_path
from .errors import CheckpointError, ConfigurationError, InfoRlError, NumericalAbort, UndefinedMetricError
from .inforl import LOG_COLUMNS, InfoRlTrainer

log = logging.getLogger("inforl")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

SWEEP_EPISODE_COLUMNS = ("code", "episode", "metric", "final_x", "final_y", "total_env_reward")
SWEEP_AGGREGATE_COLUMNS = ("code", "episodes", "metric_mean", "metric_std", "env_return_mean")
CONFUSION_COLUMNS = ("code_index", "goal_index", "count")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows):
    ckpt_io.atomic_write_text(path, csv_text(columns, rows))


def trajectory_rows(traj: evaluation.Trajectory, categorical: bool):
    for t in range(traj.steps):
        row = {
            "step": t,
            "x": float(traj.positions[t + 1, 0]),
            "y": float(traj.positions[t + 1, 1]),
            "code": int(traj.codes[t]) if categorical else float(np.atleast_1d(traj.codes[t])[0]),
            "reward": float(traj.rewards[t]),
        }
        for j, a in enumerate(traj.actions[t]):
            row[f"action_{j}"] = float(a)
        yield row


def trajectory_columns(action_dim: int):
    return ("step", "x", "y", "code", *[f"action_{j}" for j in range(action_dim)], "reward")


# train / resume --------------------------------------------------------------------


def _resolve_config(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return preset_path(path)
    except ConfigurationError:
        raise ConfigurationError(f"config file {path!r} not found (and no preset of that name)") from None


def _checkpoint_path(run_dir: Path, iteration: int) -> Path:
    return run_dir / "checkpoints" / f"iter_{iteration:06d}.json"


def run_training(trainer: InfoRlTrainer, run_dir: Path) -> int:
    """Drive the trainer to ``run.iterations``, writing the log and checkpoints as it goes."""
    cfg = trainer.config
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_io.atomic_write_text(run_dir / "config.cfg", cfg.dumps())
    log_path = run_dir / "train_log.csv"
    write_csv(log_path, LOG_COLUMNS, trainer.log_rows)
    every = cfg.run.checkpoint_every

    def on_iteration(tr, row):
        write_csv(log_path, LOG_COLUMNS, tr.log_rows)
        log.info("iter %d env_return %.4g post_reward %.4g mi %.4g", row["iteration"],
                 row["env_return_mean"], row["posterior_reward_mean"], row["mi_bound"])
        if every and tr.iteration % every == 0:
            ckpt_io.save_checkpoint(_checkpoint_path(run_dir, tr.iteration), ckpt_io.capture(tr))

    start = time.perf_counter()
    try:
        trainer.run(cfg.run.iterations, on_iteration)
    except NumericalAbort as exc:
        log.error("numerical abort at iteration %s: %s %s", exc.iteration, exc, exc.diagnostics)
        return EXIT_NUMERIC
    ckpt_io.save_checkpoint(run_dir / "checkpoints" / "final.json", ckpt_io.capture(trainer))
    log.info("finished %d iterations in %.1fs -> %s", trainer.iteration, time.perf_counter() - start, run_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(_resolve_config(args.config))
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = cfg.with_overrides(overrides)
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.env.name}_seed{cfg.run.seed}"
    return run_training(InfoRlTrainer(cfg), out)


def cmd_resume(args) -> int:
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    overrides = list(args.set or [])
    bad = [o for o in overrides if not o.strip().startswith("run.")]
    if bad:
        raise ConfigurationError(f"resume only accepts run.* overrides, got {bad}")
    cfg = ck.config.with_overrides(overrides)
    trainer = ckpt_io.restore(ck, cfg)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent
    return run_training(trainer, out)


# evaluation ----------------------------------------------------------------------


def _load_for_eval(path, want: str):
    ck = ckpt_io.load_checkpoint(path)
    trainer = ckpt_io.restore(ck)
    kind = ck.config.info.prior
    if want == "continuous" and (kind != "uniform" or ck.config.info.latent_dim != 1):
        raise ConfigurationError(
            f"this protocol needs a single continuous code; checkpoint uses a {kind} prior"
            f" (latent_dim={ck.config.info.latent_dim})"
        )
    if want == "categorical" and kind != "categorical":
        raise ConfigurationError("confusion evaluation needs a categorical-code checkpoint")
    return ck, trainer


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_eval_sweep(args) -> int:
    ck, tr = _load_for_eval(args.checkpoint, "continuous")
    metric = args.metric
    if metric == "auto":
        metric = "speed" if ck.config.env.name == "line_speed" else "angle"
    try:
        sweep = evaluation.latent_sweep(tr.policy, tr.env, metric, args.code_min, args.code_max,
                                        args.code_step, args.episodes, seed=args.seed)
    except UndefinedMetricError as exc:
        raise ConfigurationError(f"sweep metric undefined: {exc}") from exc
    out = _out_dir(args, "eval_sweep")
    episode_rows = []
    for i, code in enumerate(sweep.codes):
        for e in range(sweep.episodes_per_code):
            episode_rows.append({
                "code": float(code), "episode": e, "metric": float(sweep.metric_values[i, e]),
                "final_x": float(sweep.final_positions[i, e, 0]),
                "final_y": float(sweep.final_positions[i, e, 1]),
                "total_env_reward": float(sweep.env_returns[i, e]),
            })
    write_csv(out / "sweep_episodes.csv", SWEEP_EPISODE_COLUMNS, episode_rows)
    write_csv(out / "sweep.csv", SWEEP_AGGREGATE_COLUMNS, list(sweep.rows()))
    label = "movement angle (deg)" if metric == "angle" else "mean speed"
    ckpt_io.atomic_write_text(out / "sweep.svg", svg.line_chart(
        sweep.codes, sweep.unwrapped_means(), sweep.metric_stds(),
        title=f"{ck.config.env.name}: {label} vs latent code", xlabel="latent code", ylabel=label))
    if len(sweep.codes) >= 3:
        rho, defined = evaluation.code_metric_correlation(sweep, with_flag=True)
        print(f"spearman={rho:.4f}{'' if defined else ' (undefined: constant metric)'} span={sweep.span():.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval_schedule(args) -> int:
    ck, tr = _load_for_eval(args.checkpoint, "continuous")
    starts = args.code_start if args.code_start else list(evaluation.code_grid(-0.25, 1.25, 0.05))
    out = _out_dir(args, "eval_schedule")
    paths, labels = [], []
    for i, start in enumerate(starts):
        traj = evaluation.scheduled_code_rollout(tr.policy, tr.env, start, args.code_delta,
                                                 args.switch_every, args.code_cap, seed=args.seed)
        write_csv(out / f"trajectory_{i:02d}.csv", trajectory_columns(tr.env.spec.action_dim),
                  list(trajectory_rows(traj, False)))
        paths.append(traj.positions)
        labels.append(f"start {start:g}")
    ckpt_io.atomic_write_text(out / "schedule.svg", svg.path_plot(
        paths, labels, title=f"code schedule (+{args.code_delta:g} every {args.switch_every} steps)"))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval_confusion(args) -> int:
    ck, tr = _load_for_eval(args.checkpoint, "categorical")
    if ck.config.env.name != "multi_goal_reach":
        raise ConfigurationError("confusion evaluation needs the multi_goal_reach environment")
    k = ck.config.info.num_classes
    cm = evaluation.confusion_eval(tr.policy, tr.env, k, args.episodes, seed=args.seed)
    out = _out_dir(args, "eval_confusion")
    write_csv(out / "confusion.csv", CONFUSION_COLUMNS, list(cm.rows()))
    ckpt_io.atomic_write_text(out / "confusion.svg", svg.heatmap(
        cm.counts, title="latent code vs goal reached", xlabel="nearest goal at episode end",
        ylabel="latent code"))
    print(f"diagonal_mass={cm.diagonal_mass():.4f} matched_diagonal_mass={cm.matched_diagonal_mass():.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_dump_trajectory(args) -> int:
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    tr = ckpt_io.restore(ck)
    info = ck.config.info
    categorical = info.prior == "categorical"
    if categorical:
        code = int(args.code)
        if code != args.code or not 0 <= code < info.num_classes:
            raise ConfigurationError(f"--code must be an integer in [0, {info.num_classes})")
    else:
        if info.latent_dim != 1:
            raise ConfigurationError("dump-trajectory supports single continuous codes only")
        code = float(args.code)
    traj = evaluation.run_episode(tr.policy, tr.env, lambda _t: code, args.seed,
                                  info.prior, info.num_classes)
    out = _out_dir(args, "trajectories")
    stem = f"trajectory_code{args.code:g}"
    write_csv(out / f"{stem}.csv", trajectory_columns(tr.env.spec.action_dim),
              list(trajectory_rows(traj, categorical)))
    markers = tr.env.goals if hasattr(tr.env, "goals") else None
    ckpt_io.atomic_write_text(out / f"{stem}.svg", svg.path_plot(
        [traj.positions], [f"code {args.code:g}"], title=f"trajectory, code {args.code:g}", markers=markers))
    print(f"wrote {out / stem}.csv")
    return EXIT_OK


# argument parsing ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inforl", description="Latent-conditioned PPO with a posterior reward.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file or preset name")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("resume", help="continue a run from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out")
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_resume)

    def eval_parser(name, func, help_):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--out")
        e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=func)
        return e

    s = eval_parser("eval-sweep", cmd_eval_sweep, "fixed-code sweep over a grid of continuous codes")
    s.add_argument("--code-min", type=float, default=-0.25)
    s.add_argument("--code-max", type=float, default=1.25)
    s.add_argument("--code-step", type=float, default=0.05)
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--metric", choices=("auto", "angle", "speed"), default="auto")

    sc = eval_parser("eval-schedule", cmd_eval_schedule, "episodes whose code increases mid-episode")
    sc.add_argument("--code-start", type=float, nargs="+")
    sc.add_argument("--code-delta", type=float, default=0.05)
    sc.add_argument("--switch-every", type=int, default=50)
    sc.add_argument("--code-cap", type=float, default=1.25)

    c = eval_parser("eval-confusion", cmd_eval_confusion, "code vs reached-goal confusion matrix")
    c.add_argument("--episodes", type=int, default=100)

    d = eval_parser("dump-trajectory", cmd_dump_trajectory, "write one deterministic episode as CSV + SVG")
    d.add_argument("--code", type=float, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, CheckpointError, InfoRlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
