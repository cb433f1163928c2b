"""Overfit one fixed 32x32, 8-frame sequence with each latent model.

    python scripts/overfit.py --modes fp lp
"""

from __future__ import annotations

import argparse
import time

from threadpoolctl import threadpool_limits

from svglp.experiments import load_train_pool, overfit, overfit_sequence


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", nargs="+", default=["fp", "lp"], choices=["fp", "lp", "det"])
    ap.add_argument("--max-steps", type=int, default=5000)
    ap.add_argument("--mnist-dir", default="data/mnist")
    args = ap.parse_args(argv)
    seq = overfit_sequence(load_train_pool(args.mnist_dir))
    with threadpool_limits(1):
        for mode in args.modes:
            t0 = time.time()
            steps, mse = overfit(mode, seq, args.max_steps)
            print(f"{mode}: per-pixel MSE {mse:.2e} after {steps} steps ({time.time() - t0:.0f} s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
