"""Velocity histograms of ground-truth (and optionally model) trajectories that
share a start state, around the first wall hit.

    python scripts/trajectory_distributions.py --n 2000 --out runs/trajectories
    python scripts/trajectory_distributions.py --checkpoint runs/ordering/lp/last.ckpt
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from svglp import config as C
from svglp.analysis import (compare_distributions, plot_histograms, post_collision_pmf,
                            velocity_distribution, VelocityHistogram)
from svglp.data import branching_batch, stack_sequences, synchronized_batch
from svglp.experiments import load_test_pool
from svglp.models import rollout
from svglp.training import load_checkpoint, model_from_checkpoint


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--frames", type=int, default=15)
    ap.add_argument("--C", type=int, default=5)
    ap.add_argument("--trajectory-seed", type=int, default=3)
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--out", default="runs/trajectories")
    ap.add_argument("--mnist-dir", default="data/mnist")
    args = ap.parse_args(argv)
    pool = load_test_pool(args.mnist_dir)
    by_index = {d.index: d.pixels for d in pool}
    truth = branching_batch(pool, args.trajectory_seed, args.n, args.frames, 32, 32)
    tmpl = [by_index[s.digit_ids[0]] for s in truth]
    traj = truth[0].trajectories[0]
    hits = [t for t, _ in traj[-1].collisions]
    first = hits[0] if hits else None
    print(f"first wall hit at frame {first}")
    steps = range(1, args.frames)
    gt = [velocity_distribution(truth, tmpl, t) for t in steps]
    out = Path(args.out)
    plot_histograms(out / "truth.png", gt)
    if first is not None and first < args.frames:
        pmf = post_collision_pmf(traj[first - 1], 32, 32, 14)
        exact = VelocityHistogram(np.round(pmf * 1e9).astype(np.int64), first)
        print(f"TV(truth at t={first}, exact pmf) = {compare_distributions(gt[first - 1], pmf):.4f}")
        plot_histograms(out / "exact_post_collision.png", [exact], ["exact"])
    if args.checkpoint:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))
        sync = synchronized_batch(pool, args.trajectory_seed, min(args.n, len(pool)),
                                  args.frames, 32, 32)
        frames = stack_sequences(sync)
        rngs = ([C.stream(0, C.PROBE, i) for i in range(frames.shape[1])]
                if model.stochastic else None)
        pred = rollout(model, frames[:args.C], args.C, args.frames, "prior", rngs).frames
        gen = np.concatenate([frames[:args.C], pred])
        mt = [by_index[s.digit_ids[0]] for s in sync]
        hists = [velocity_distribution(gen, mt, t) for t in range(args.C, args.frames)]
        plot_histograms(out / "model.png", hists)
        for h in hists:
            print(f"t={h.t}: TV to truth {compare_distributions(h, gt[h.t - 1]):.3f} "
                  f"(dropped {h.dropped})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
