"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
Reports go to stdout as ``key,value`` lines; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluation, options, plotting
from .agent import Agent
from .nn import CheckpointError
from .ppo import train
from .rollout import Workers

log = logging.getLogger("trajemp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration file (INI-style)")
    common.add_argument("--preset", choices=["full16", "full256", "desk"],
                        help="start from a named configuration instead of the defaults")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics and sequential trials")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="trajemp", description="Trajectory-level empowerment on the pushing-boxes world.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train an agent with PPO")
    p.add_argument("--updates", type=int, help="number of PPO updates (overrides the config)")
    p.add_argument("--checkpoint", type=Path, help="initialise from this checkpoint")

    p = sub.add_parser("eval", parents=[common], help="median decode steps of an agent")
    p.add_argument("--checkpoint", type=Path, help="trained parameters (default: fresh random init)")
    p.add_argument("--trials", type=int, help="number of evaluation episodes")

    p = sub.add_parser("baseline", parents=[common], help="uniform random guesser without environment")
    p.add_argument("--bits", type=int, help="option word length")
    p.add_argument("--trials", type=int, default=4096, help="number of decode intervals")

    p = sub.add_parser("empowerment", parents=[common], help="mean log q(w|z_T) + H(options)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--trials", type=int, default=256, help="number of episodes")

    p = sub.add_parser("render", parents=[common], help="dump one episode as PGM frames and logs")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--steps", type=int, default=16)
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    if args.config is not None:
        cfg = cfgmod.load(args.config)
    elif args.preset:
        cfg = cfgmod.preset(args.preset)
    else:
        cfg = cfgmod.RunConfig()
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.out is not None:
        run = replace(run, out_dir=str(args.out))
    if args.deterministic:
        run = replace(run, deterministic=True)
    return replace(cfg, run=run)


def make_agent(cfg: cfgmod.RunConfig, checkpoint: Path | None) -> Agent:
    agent = Agent(cfg.agent, seed=cfg.run.seed)
    if checkpoint is not None:
        if not checkpoint.is_file():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        agent.load(checkpoint)
    return agent


def emit(rows, out_dir: Path | None, name: str) -> None:
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["key", "value"])
    for key, value in rows:
        writer.writerow([key, _fmt(value)])
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "value"])
            for key, value in rows:
                w.writerow([key, _fmt(value)])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def cmd_train(args, cfg: cfgmod.RunConfig) -> None:
    if args.updates is not None:
        cfg = replace(cfg, train=replace(cfg.train, n_updates=args.updates))
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / "config.ini")
    agent = make_agent(cfg, args.checkpoint)
    workers = Workers(agent, cfg.env, cfg.options, cfg.train.n_envs, seed=cfg.run.seed, horizon=cfg.train.horizon)

    def evaluate(agent, update):
        rep = evaluation.eval_median_steps(agent, cfg.env, cfg.options, cfg.run.eval_trials,
                                           seed=cfg.run.seed + 7919, horizon=cfg.train.horizon,
                                           max_steps=cfg.run.eval_max_steps, batch=cfg.run.eval_batch)
        emp, _, _ = evaluation.empowerment_estimate(agent, cfg.env, cfg.options, cfg.run.eval_batch,
                                                    seed=cfg.run.seed + 104729, horizon=cfg.train.horizon,
                                                    batch=cfg.run.eval_batch)
        return {"median_decode_steps": rep.median, "empowerment_nats": emp}

    rows = train(agent, workers, cfg.train, seed=cfg.run.seed, out_dir=out,
                 checkpoint_every=cfg.run.checkpoint_every, evaluate=evaluate,
                 eval_every=cfg.run.eval_every)
    if not args.no_plots and rows:
        plotting.training_curves(rows, out / "training.png")
    last = rows[-1] if rows else {}
    emit([("updates", len(rows)), ("steps", last.get("steps", 0)),
          ("final_mean_reward", last.get("mean_reward", float("nan"))),
          ("final_median_decode_steps", last.get("median_decode_steps", float("nan"))),
          ("checkpoint", str(out / "final.empw"))], out, "train_summary.csv")


def cmd_eval(args, cfg: cfgmod.RunConfig) -> None:
    agent = make_agent(cfg, args.checkpoint)
    trials = args.trials if args.trials is not None else cfg.run.eval_trials
    rep = evaluation.eval_median_steps(agent, cfg.env, cfg.options, trials, seed=cfg.run.seed,
                                       horizon=cfg.train.horizon, max_steps=cfg.run.eval_max_steps,
                                       batch=cfg.run.eval_batch)
    base = evaluation.baseline_random(cfg.options, max(rep.n_intervals, 1), seed=cfg.run.seed)
    rep.baseline_medians = {"random_guesser": base.median,
                            "geometric": float(evaluation.geometric_median(cfg.options.n_bits))}
    out = Path(args.out) if args.out else None
    emit(rep.rows(), out, "eval_report.csv")
    if out is not None and not args.no_plots:
        plotting.interval_histogram(rep.intervals, cfg.options.n_bits, out / "intervals.png",
                                    baseline=base.intervals)


def cmd_baseline(args, cfg: cfgmod.RunConfig) -> None:
    bits = args.bits if args.bits is not None else cfg.options.n_bits
    space = options.OptionSpace(bits)
    rep = evaluation.baseline_random(space, args.trials, seed=cfg.run.seed)
    rep.baseline_medians = {"geometric": float(evaluation.geometric_median(bits))}
    out = Path(args.out) if args.out else None
    emit([("n_bits", bits)] + rep.rows(), out, "baseline_report.csv")
    if out is not None and not args.no_plots:
        plotting.interval_histogram(rep.intervals, bits, out / "baseline_intervals.png")


def cmd_empowerment(args, cfg: cfgmod.RunConfig) -> None:
    agent = make_agent(cfg, args.checkpoint)
    est, h, curve = evaluation.empowerment_estimate(agent, cfg.env, cfg.options, args.trials,
                                                    seed=cfg.run.seed, horizon=cfg.train.horizon,
                                                    batch=cfg.run.eval_batch)
    out = Path(args.out) if args.out else None
    emit([("n_samples", args.trials), ("empowerment_nats", est), ("entropy_nats", h),
          ("mean_log_q", est - h)], out, "empowerment_report.csv")
    if out is not None:
        with open(out / "empowerment_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "empowerment_nats"])
            for t, v in enumerate(curve):
                w.writerow([t, repr(float(v))])
        if not args.no_plots:
            plotting.empowerment_curve(curve, h, out / "empowerment_curve.png")


def cmd_render(args, cfg: cfgmod.RunConfig) -> None:
    agent = make_agent(cfg, args.checkpoint)
    out = Path(args.out) if args.out else Path(cfg.run.out_dir) / "episode"
    trace = evaluation.render_episode(agent, cfg.env, cfg.options, cfg.run.seed, args.steps, out)
    if not args.no_plots and args.steps > 0:
        plotting.episode_panels(trace, out / "episode.png")
    emit([("steps", args.steps), ("successes", sum(trace["rewards"])), ("out_dir", str(out))], None, "")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "empowerment": cmd_empowerment,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with _thread_limit(cfg.run.deterministic):
            COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, CheckpointError, FloatingPointError) as exc:
        print(f"trajemp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


@contextlib.contextmanager
def _thread_limit(enabled: bool):
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


if __name__ == "__main__":
    sys.exit(main())
