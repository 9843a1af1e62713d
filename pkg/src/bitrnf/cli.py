"""Command line: train, eval, verify, density, bench.

Exit codes: 0 success, 1 a verification check failed, 2 usage or invalid
configuration, 3 unreadable or incompatible checkpoint.
"""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import verify as verification
from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .policy import conditioner_forward, density_grid
from .rl import A2CTrainer, MetricsWriter, evaluate

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dump(obj, out=None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _checkpoint_context(path):
    ckpt = load_checkpoint(path)
    env = ckpt.config.make_env()
    return ckpt, env, ckpt.config.policy_config(env)


# commands ---------------------------------------------------------------------

def cmd_train(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    env = cfg.make_env()
    trainer = A2CTrainer(env, cfg.policy_config(env), cfg.train_config())
    every = cfg.train.checkpoint_every

    def snapshot(name):
        ckpt = Checkpoint(cfg, trainer.policy_params, trainer.value_params,
                          trainer.rng.bit_generator.state, trainer.step_count,
                          trainer.episode_count)
        save_checkpoint(os.path.join(args.out, name), ckpt)

    writer = MetricsWriter(os.path.join(args.out, "metrics.csv"))
    last = [0]

    def on_update(row):
        writer(row)
        if every and trainer.step_count // every > last[0] // every:
            snapshot(f"checkpoint_{trainer.step_count:08d}.json")
        last[0] = trainer.step_count

    try:
        trainer.train(on_update=on_update)
    finally:
        writer.close()
    snapshot("final.json")
    _dump({"steps": trainer.step_count, "episodes": trainer.episode_count,
           "skipped_steps": trainer.skipped_steps,
           "checkpoint": os.path.join(args.out, "final.json")})
    return EXIT_OK


def cmd_eval(args):
    ckpt, env, pcfg = _checkpoint_context(args.checkpoint)
    episodes = ckpt.config.eval.episodes if args.episodes is None else args.episodes
    mode = ckpt.config.eval.mode if args.mode is None else args.mode
    if episodes < 1:
        raise UsageError("--episodes must be >= 1")
    modes = ("mean", "sample") if mode == "both" else (mode,)
    params = ckpt.policy.arrays()
    reports = []
    for i, m in enumerate(modes):
        rng = np.random.default_rng([args.seed, i])
        rep = evaluate(params, pcfg, env, episodes, m, rng)
        rep["worst"] = rep["min"]
        reports.append(rep)
        print(f"{m}: mean {rep['mean']:.6g} std {rep['std']:.6g} "
              f"min {rep['min']:.6g} max {rep['max']:.6g}", file=sys.stderr)
    _dump({"checkpoint": args.checkpoint, "step": ckpt.step, "reports": reports}, args.out)
    return EXIT_OK


def cmd_verify(args):
    reports = verification.run_suite(args.suite, args.seed, args.cases, args.samples)
    ok = verification.suite_passed(reports)
    _dump({"suite": args.suite, "seed": args.seed, "pass": ok,
           "checks": [r.to_dict() for r in reports]}, args.out)
    return EXIT_OK if ok else EXIT_CHECK


def _parse_state(text, dim):
    try:
        state = np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"--state: {exc}") from exc
    if state.shape != (dim,):
        raise UsageError(f"--state needs {dim} comma-separated values, got {state.size}")
    return state


def cmd_density(args):
    ckpt, env, pcfg = _checkpoint_context(args.checkpoint)
    if not 0 <= args.dim < pcfg.action_dim:
        raise UsageError(f"--dim {args.dim} out of range for {pcfg.action_dim} action dimension(s)")
    if not args.lo < args.hi or args.n < 2:
        raise UsageError("need --lo < --hi and --n >= 2")
    state = _parse_state(args.state, pcfg.state_dim) if args.state else np.zeros(pcfg.state_dim)
    dist = conditioner_forward(state[None], ckpt.policy.arrays(), pcfg)
    grid, pdf, contrib = density_grid(dist, args.dim, args.lo, args.hi, args.n)
    mean = float(np.asarray(dist.mean())[0, args.dim])
    if pcfg.has_flow:
        flow, alt = contrib[:, 0], contrib[:, 1:].sum(axis=1)
    else:
        flow, alt = np.zeros_like(pdf), contrib.sum(axis=1)
    lines = [f"# mean={mean!r}", "a,pdf,component_pdf_flow,component_pdf_alt"]
    lines += [f"{a!r},{p!r},{f!r},{q!r}" for a, p, f, q in
              zip(grid.tolist(), pdf.tolist(), flow.tolist(), alt.tolist())]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _percentiles(samples):
    ms = np.asarray(samples) * 1e3
    return {"p50_ms": float(np.percentile(ms, 50)), "p99_ms": float(np.percentile(ms, 99)),
            "max_ms": float(ms.max())}


def bench_policy(params, pcfg, env, calls, rng, warmup=10):
    """Per-call wall time of conditioner+sample and conditioner+mean (no tape)."""
    states = np.stack([env.reset(rng) for _ in range(calls + warmup)])
    timings = {"sample": [], "mean": []}
    for path in ("sample", "mean"):
        for i, s in enumerate(states):
            t0 = time.perf_counter()
            dist = conditioner_forward(s[None], params, pcfg)
            if path == "sample":
                dist.sample(rng)
            else:
                dist.mean()
            dt = time.perf_counter() - t0
            if i >= warmup:
                timings[path].append(dt)
    return {"calls": calls, "action_dim": pcfg.action_dim, "kind": pcfg.kind,
            "K": None if pcfg.hyper is None else pcfg.hyper.K,
            "trunk": list(pcfg.trunk),
            "sample_path": _percentiles(timings["sample"]),
            "mean_path": _percentiles(timings["mean"])}


def cmd_bench(args):
    if args.calls < 100:
        raise UsageError("--calls must be >= 100")
    ckpt, env, pcfg = _checkpoint_context(args.checkpoint)
    report = bench_policy(ckpt.policy.arrays(), pcfg, env, args.calls,
                          np.random.default_rng(args.seed))
    _dump(report, args.out)
    return EXIT_OK


# entry point --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="bitrnf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a policy from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--mode", choices=("mean", "sample", "both"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="also write the JSON report here")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the verification suite")
    v.add_argument("--suite", choices=verification.SUITES, default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--cases", type=int, help="override the number of cases per check")
    v.add_argument("--samples", type=int, help="Monte-Carlo samples per mean case")
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("density", help="export a 1-D policy density grid as CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--state", help="comma-separated state; zeros if omitted")
    d.add_argument("--dim", type=int, default=0)
    d.add_argument("--lo", type=float, default=-3.0)
    d.add_argument("--hi", type=float, default=3.0)
    d.add_argument("--n", type=int, default=601)
    d.add_argument("--out")
    d.set_defaults(func=cmd_density)

    b = sub.add_parser("bench", help="inference latency percentiles")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--calls", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointFormatError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
