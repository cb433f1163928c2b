"""Command-line entry point: ``svglp <command> [options]``.

Configuration precedence is built-in defaults, then ``$SVG_DATA_ROOT`` for the
MNIST directory, then ``--config FILE``, then command-line flags and
``--set section.key=value`` overrides.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis as A
from . import config as cfgmod
from .config import RunConfig, apply_updates, dump_ini, load_ini, parse_overrides
from .data import (IdxFormatError, PoolTooSmallError, branching_batch, export_sequences,
                   load_pool, read_sequences, stack_sequences, synchronized_batch)
from .evaluation import best_of_n_eval, evaluation_set, save_sheet, write_curves
from .models import rollout
from .training import (CheckpointError, NonFiniteError, build_model, load_checkpoint,
                       model_from_checkpoint, train)

DATA_ROOT_ENV = "SVG_DATA_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("svglp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model]/[data]/[train]/[eval] sections (default: none)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. train.lr=0.001 (repeatable)")
    p.add_argument("--out", default="runs/latest", help="output directory (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = _Parser(prog="svglp", description="Stochastic video generation on SM-MNIST.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    _common(p)
    p.add_argument("--mode", choices=cfgmod.MODES, default=None, help="model variant (config value if omitted)")
    p.add_argument("--steps", type=int, default=None, help="total optimisation steps (config value if omitted)")
    p.add_argument("--seed", type=int, default=None, help="master seed (config value if omitted)")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt if present")

    p = sub.add_parser("generate", help="sample continuations of a test sequence", formatter_class=fmt)
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--C", type=int, default=5, help="conditioning frames")
    p.add_argument("--horizon", type=int, default=15, help="total frames including conditioning")
    p.add_argument("--n-samples", type=int, default=3, help="sample rows")
    p.add_argument("--sequence", type=int, default=0, help="index of the held-out test sequence")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")

    p = sub.add_parser("eval", help="best-of-N SSIM/PSNR curves", formatter_class=fmt)
    _common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--n-samples", type=int, default=None, help="N (eval.n_samples if omitted)")
    p.add_argument("--n-sequences", type=int, default=None, help="test sequences (eval.n_sequences if omitted)")
    p.add_argument("--seed", type=int, default=None, help="evaluation seed (eval.seed if omitted)")

    p = sub.add_parser("analyze", help="trajectory and prior-variance diagnostics", formatter_class=fmt)
    _common(p)
    p.add_argument("kind", choices=("velocity-dist", "prior-variance"))
    p.add_argument("--checkpoint", default=None, help="checkpoint file")
    p.add_argument("--ground-truth", action="store_true", help="analyse generator output (no model)")
    p.add_argument("--trajectory-seed", type=int, default=0, help="shared trajectory seed")
    p.add_argument("--n", type=int, default=100, help="sequences in the probe")
    p.add_argument("--T", type=int, default=15, help="frames per probe sequence")
    p.add_argument("--C", type=int, default=5, help="conditioning frames for model samples")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")

    p = sub.add_parser("dataset", help="export or inspect SM-MNIST sequences", formatter_class=fmt)
    _common(p)
    p.add_argument("action", choices=("export", "inspect"))
    p.add_argument("--file", default=None, help="sequence file (default: OUT/sequences.smmn)")
    p.add_argument("--n", type=int, default=16, help="sequences to export")
    p.add_argument("--T", type=int, default=20, help="frames per sequence")
    p.add_argument("--split", choices=("train", "test"), default="test", help="digit pool")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")

    p = sub.add_parser("dump-config", help="print the effective configuration", formatter_class=fmt)
    _common(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        cfg = apply_updates(cfg, {"data.mnist_dir": root})
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg = load_ini(path.read_text(), cfg)
    flags = {}
    if getattr(args, "mode", None) is not None and args.command == "train":
        flags["model.mode"] = args.mode
    if args.command == "train" and args.steps is not None:
        flags["train.steps"] = str(args.steps)
    if args.command == "train" and args.seed is not None:
        flags["train.seed"] = str(args.seed)
    flags.update(parse_overrides(args.overrides))
    return apply_updates(cfg, flags)


def _pool(cfg: RunConfig, split: str):
    return load_pool(cfg.data.mnist_dir, split, cfg.data.digit_size)


def _require_frame_size(cfg: RunConfig) -> None:
    if cfg.model.frame_size != cfg.data.frame_size:
        raise UsageError(f"model frame_size {cfg.model.frame_size} does not match the "
                         f"{cfg.data.profile} data profile ({cfg.data.frame_size})")


def cmd_train(args, cfg: RunConfig) -> int:
    _require_frame_size(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_ini(cfg))
    pool = _pool(cfg, "train")
    resume = None
    if args.resume and (out / "last.ckpt").exists():
        resume = load_checkpoint(out / "last.ckpt")
    model = build_model(cfg)
    result = train(model, cfg, pool, resume=resume, out_dir=out)
    print(f"trained {cfg.model.mode} to step {result.checkpoint.step}; checkpoint {out / 'last.ckpt'}")
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    if args.horizon <= args.C:
        raise UsageError(f"horizon {args.horizon} must exceed C={args.C}")
    if args.n_samples < 1:
        raise UsageError("--n-samples must be >= 1")
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    size = ckpt.config.model.frame_size
    pool = _pool(ckpt.config, "test")
    gt = evaluation_set(pool, args.sequence + 1, args.horizon, size, cfg.eval.seed,
                        ckpt.config.data.num_digits)[:, args.sequence:args.sequence + 1]
    cond = np.repeat(gt[:args.C], args.n_samples, axis=1)
    rngs = ([cfgmod.stream(args.seed, cfgmod.GENERATE, j) for j in range(args.n_samples)]
            if model.stochastic else None)
    pred = rollout(model, cond, args.C, args.horizon, "prior", rngs).frames
    samples = np.concatenate([cond, pred], axis=0)[:, :, 0]            # [T, n, H, W]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_sheet(out / "samples.png", [gt[:, 0, 0]] + [samples[:, j] for j in range(args.n_samples)])
    export_sequences(out / "samples.smmn", np.transpose(samples, (1, 0, 2, 3)))
    export_sequences(out / "ground_truth.smmn", np.transpose(gt[:, :, 0], (1, 0, 2, 3)))
    print(f"wrote {args.n_samples} samples of {args.horizon} frames to {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    ec = cfg.eval
    n = args.n_samples if args.n_samples is not None else ec.n_samples
    n_seq = args.n_sequences if args.n_sequences is not None else ec.n_sequences
    seed = args.seed if args.seed is not None else ec.seed
    if n < 1:
        raise UsageError("--n-samples must be >= 1")
    pool = _pool(ckpt.config, "test")
    frames = evaluation_set(pool, n_seq, ec.horizon, ckpt.config.model.frame_size, seed,
                            ckpt.config.data.num_digits)
    res = best_of_n_eval(model, frames, ec.C, ec.horizon, n, seed=seed)
    out = Path(args.out)
    write_curves(out / "curves.csv", res.curves.values())
    for name, c in res.curves.items():
        print(f"{name}: mean over steps {c.mean.mean():.4f}")
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    model = None
    mcfg = cfg
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model, mcfg = model_from_checkpoint(ckpt), ckpt.config
    if args.kind == "prior-variance":
        if model is None:
            raise UsageError("prior-variance needs --checkpoint")
        if model.mode != "lp":
            raise UsageError(f"prior-variance needs a learned-prior checkpoint; this one is {model.mode!r}")
        pool = _pool(mcfg, "test")
        probe = synchronized_batch(pool, args.trajectory_seed, args.n, args.T,
                                   mcfg.model.frame_size, mcfg.model.frame_size, mcfg.data.num_digits)
        curve = A.prior_variance_probe(model, probe)
        A.write_prior_curve(out / "prior_variance.csv", curve)
        A.plot_prior_curve(out / "prior_variance.png", curve)
        print(f"collisions at {curve.collisions}; wrote {out / 'prior_variance.csv'}")
        return EXIT_OK
    if not args.ground_truth and model is None:
        raise UsageError("velocity-dist needs --ground-truth or --checkpoint")
    size = mcfg.data.frame_size if model is None else mcfg.model.frame_size
    pool = _pool(mcfg, "test")
    truth = branching_batch(pool, args.trajectory_seed, args.n, args.T, size, size, sample_seed=args.seed)
    steps = range(1, args.T)
    by_index = {d.index: d.pixels for d in pool}
    templates = [by_index[s.digit_ids[0]] for s in truth]
    rows = []
    gt_hists = [A.velocity_distribution(truth, templates, t) for t in steps]
    for h in gt_hists:
        A.write_histogram(out / "truth" / f"velocity_t{h.t:03d}.csv", h)
    A.plot_histograms(out / "truth_velocity.png", gt_hists)
    if model is not None:
        if args.T <= args.C:
            raise UsageError(f"--T {args.T} must exceed --C {args.C}")
        sync = synchronized_batch(pool, args.trajectory_seed, args.n, args.T, size, size)
        frames = stack_sequences(sync)
        rngs = ([cfgmod.stream(args.seed, cfgmod.PROBE, i) for i in range(args.n)]
                if model.stochastic else None)
        pred = rollout(model, frames[:args.C], args.C, args.T, "prior", rngs).frames
        gen = np.concatenate([frames[:args.C], pred], axis=0)
        tmpl = [by_index[s.digit_ids[0]] for s in sync]
        for t in range(args.C, args.T):
            h = A.velocity_distribution(gen, tmpl, t)
            A.write_histogram(out / "model" / f"velocity_t{t:03d}.csv", h)
            rows.append((t, A.compare_distributions(h, gt_hists[t - 1]), h.dropped))
        with open(out / "tv_distance.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tv", "dropped"])
            for t, tv, d in rows:
                w.writerow([t, repr(tv), d])
    print(f"wrote velocity histograms for t=1..{args.T - 1} to {out}")
    return EXIT_OK


def cmd_dataset(args, cfg: RunConfig) -> int:
    path = Path(args.file) if args.file else Path(args.out) / "sequences.smmn"
    if args.action == "export":
        pool = _pool(cfg, args.split)
        size = cfg.data.frame_size
        frames = evaluation_set(pool, args.n, args.T, size, args.seed, cfg.data.num_digits)
        path.parent.mkdir(parents=True, exist_ok=True)
        export_sequences(path, np.transpose(frames[:, :, 0], (1, 0, 2, 3)))
        print(f"wrote {args.n} sequences of {args.T} frames ({size}x{size}) to {path}")
        return EXIT_OK
    if not path.exists():
        raise FileNotFoundError(f"sequence file not found: {path}")
    frames = read_sequences(path)
    count, n_t, h, w = frames.shape
    print(f"{path}: {count} sequences x {n_t} frames of {h}x{w}; "
          f"pixel range [{frames.min():.3f}, {frames.max():.3f}], mean {frames.mean():.4f}")
    return EXIT_OK


def cmd_dump_config(args, cfg: RunConfig) -> int:
    sys.stdout.write(dump_ini(cfg))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "eval": cmd_eval,
            "analyze": cmd_analyze, "dataset": cmd_dataset, "dump-config": cmd_dump_config}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        with threadpool_limits(max(1, args.threads)):
            return COMMANDS[args.command](args, cfg)
    except (UsageError, KeyError, ValueError) as e:
        if isinstance(e, (IdxFormatError, PoolTooSmallError, CheckpointError)):
            print(f"svglp: data error: {e}", file=sys.stderr)
            return EXIT_DATA
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"svglp: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError) as e:
        print(f"svglp: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as e:
        print(f"svglp: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
