"""``reachrl`` command line: train, eval, rollout, ik-check, export.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""
import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .chain import load_chain
from .config import ConfigError, load_config
from .env import EnvConfig, ReachEnv, sample_target
from .ik import IKParams, solve_ik
from .percept import (
    TargetPipeline,
    camera_pose,
    frame_ids,
    mount_from_doc,
    read_detections,
    read_pgm16,
    write_targets,
)
from .policy import CheckpointError, actor_critic_forward, load_checkpoint
from .ppo import PPOConfig, evaluate, read_trainlog, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _load_params(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise RuntimeFailure(str(exc)) from exc


def cmd_train(args, doc):
    overrides = {"seed": args.seed}
    for key in ("total_steps", "n_steps", "n_envs"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    cfg = PPOConfig.from_doc(doc, **overrides)
    load_chain(doc)
    EnvConfig.from_doc(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    def report(row):
        print(f"update {row['update']:4d} steps {row['steps']:8d} ep_reward {row['mean_ep_reward']:8.3f} "
              f"disc_return {row['mean_disc_return']:8.3f} final_dist {row['mean_final_dist']:.3f} "
              f"kl {row['approx_kl']:.4f}", flush=True)

    train(cfg, doc, out_dir=out, on_update=report)
    print(f"done in {time.perf_counter() - start:.1f}s -> {out / 'policy.ckpt'}, {out / 'trainlog.csv'}")


def cmd_eval(args, doc):
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    params = _load_params(args.checkpoint)
    report = evaluate(params, doc, args.episodes, args.seed)
    report["checkpoint"] = str(args.checkpoint)
    report["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, indent=2, sort_keys=True)
    _write_text(out / "eval.json", text + "\n")
    print(text)


ROLLOUT_HEADER = ("step", "q0", "q1", "q2", "q3", "q4", "q5", "hand_x", "hand_y", "hand_z",
                  "target_x", "target_y", "target_z", "reward", "distance")


def cmd_rollout(args, doc):
    if args.steps <= 0:
        raise UsageError("--steps must be positive")
    fixed = args.target is not None
    percept = args.depth_dir is not None or args.detections is not None
    if fixed == percept:
        raise UsageError("give exactly one target source: --target X Y Z, or --depth-dir with --detections")
    if percept and (args.depth_dir is None or args.detections is None):
        raise UsageError("--depth-dir and --detections go together")
    params = _load_params(args.checkpoint)
    chain = load_chain(doc)
    env_cfg = dataclasses.replace(EnvConfig.from_doc(doc), horizon=max(args.steps, 1))
    env = ReachEnv(chain, env_cfg, seed=args.seed)

    frames = []
    pipeline = mount = None
    published = []
    if fixed:
        obs = env.reset(target=args.target)
    else:
        try:
            detections = read_detections(args.detections)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read detections: {exc}") from exc
        frames = frame_ids(args.depth_dir)
        pipeline = TargetPipeline.from_config(doc, np.random.default_rng(args.seed))
        mount = mount_from_doc(doc)
        obs = env.reset(target=np.zeros(3))

        def next_frame():
            fid = frames.pop(0)
            depth = read_pgm16(Path(args.depth_dir) / f"{fid}.pgm")
            est = pipeline.process(fid, depth, detections.get(fid, []), camera_pose(chain, env.q, mount))
            if est is not None:
                published.append(est)
            return est

        first = None
        while frames and first is None:
            first = next_frame()
        if first is None:
            raise RuntimeFailure("perception never published a target")
        obs = env.set_target(first.point_base)

    rows = []
    for t in range(args.steps):
        if frames:
            est = next_frame()
            if est is not None:
                obs = env.set_target(est.point_base)
        mean, _, _ = actor_critic_forward(params, obs)
        obs, reward, done, info = env.step(mean)
        rows.append([t + 1, *(repr(float(v)) for v in env.q), *(repr(float(v)) for v in info["hand"]),
                     *(repr(float(v)) for v in env.target), repr(float(reward)), repr(info["distance"])])
        if done:
            break
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "rollout.csv", ROLLOUT_HEADER, rows)
    if percept:
        write_targets(out / "targets.csv", published)
    last = rows[-1]
    print(f"{len(rows)} steps, final distance {float(last[-1]):.4f} m -> {out / 'rollout.csv'}")


def cmd_ik_check(args, doc):
    if args.n_targets <= 0:
        raise UsageError("--n-targets must be positive")
    chain = load_chain(doc)
    ranges = EnvConfig.from_doc(doc).ranges
    params = IKParams.from_doc(doc)
    rng = np.random.default_rng(args.seed)
    home = np.zeros(chain.n_joints)
    residuals = []
    reached = 0
    for _ in range(args.n_targets):
        result = solve_ik(chain, sample_target(rng, ranges), home, params)
        residuals.append(result.residual)
        reached += result.converged
    residuals = np.array(residuals)
    q = np.percentile(residuals, [0, 25, 50, 75, 100])
    report = {
        "n_targets": args.n_targets,
        "seed": args.seed,
        "reachable_fraction": reached / args.n_targets,
        "residual_mean": float(residuals.mean()),
        "residual_percentiles": dict(zip(("min", "p25", "median", "p75", "max"), map(float, q))),
        "tolerance": params.tolerance,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, indent=2, sort_keys=True)
    _write_text(out / "ik_check.json", text + "\n")
    print(text)


def cmd_export(args, doc):
    try:
        log = read_trainlog(args.trainlog)
    except OSError as exc:
        raise UsageError(f"cannot read {args.trainlog}: {exc}") from exc
    except ValueError as exc:
        raise RuntimeFailure(str(exc)) from exc
    if len(log) == 0:
        raise RuntimeFailure(f"{args.trainlog}: no rows to export")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["steps"] for r in log.rows]
    for name, column in (("disc_return.csv", "mean_disc_return"), ("final_dist.csv", "mean_final_dist")):
        _write_csv(out / name, ("steps", column), [[s, repr(r[column])] for s, r in zip(steps, log.rows)])
    print(f"{len(log)} points -> {out / 'disc_return.csv'}, {out / 'final_dist.csv'}")


def build_parser():
    parser = _Parser(prog="reachrl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config layered over the defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a policy with PPO")
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--n-envs", dest="n_envs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint with mean actions")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", parents=[common], help="closed-loop run on a fixed or perceived target")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--target", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--depth-dir", dest="depth_dir", type=Path)
    p.add_argument("--detections", type=Path)
    p.add_argument("--steps", type=int, default=250)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("ik-check", parents=[common], help="fraction of sampled targets the IK oracle reaches")
    p.add_argument("--n-targets", dest="n_targets", type=int, default=1000)
    p.set_defaults(func=cmd_ik_check)

    p = sub.add_parser("export", parents=[common], help="plot-ready series from a TrainLog CSV")
    p.add_argument("--trainlog", type=Path, required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        doc = load_config(args.config)
        args.func(args, doc)
    except (ConfigError, UsageError) as exc:
        print(f"reachrl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, FloatingPointError) as exc:
        print(f"reachrl {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
