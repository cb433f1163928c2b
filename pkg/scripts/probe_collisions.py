"""Learned-prior sigma on synchronised sequences, marked with wall hits.

    python scripts/probe_collisions.py --checkpoint runs/ordering/lp/last.ckpt --out runs/probe

Also accepts ``--trajectory-seed`` and ``--frames`` to probe a chosen
trajectory at any length instead of the automatically selected one.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from svglp.analysis import (collision_contrast, plot_prior_curve, prior_variance_probe,
                            write_prior_curve)
from svglp.data import synchronized_batch
from svglp.experiments import load_test_pool, select_probe_seed
from svglp.training import load_checkpoint, model_from_checkpoint


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out", default="runs/probe")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--frames", type=int, default=15)
    ap.add_argument("--first-step", type=int, default=6)
    ap.add_argument("--trajectory-seed", type=int, default=None)
    ap.add_argument("--mnist-dir", default="data/mnist")
    args = ap.parse_args(argv)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    seed = args.trajectory_seed
    if seed is None:
        seed = select_probe_seed(args.frames, args.first_step)
    probe = synchronized_batch(load_test_pool(args.mnist_dir), seed, args.n, args.frames, 32, 32)
    curve = prior_variance_probe(model, probe)
    out = Path(args.out)
    write_prior_curve(out / "prior_variance.csv", curve)
    plot_prior_curve(out / "prior_variance.png", curve)
    print(f"trajectory seed {seed}, wall hits at {curve.collisions[0]}")
    try:
        near, far, ratio = collision_contrast(curve, args.first_step)
        print(f"mean sigma near hits {near:.4f}, far from hits {far:.4f}, ratio {ratio:.3f}")
    except ValueError as e:
        print(f"no contrast: {e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
