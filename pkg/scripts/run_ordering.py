"""Train deterministic, fixed-prior and learned-prior models on an equal budget,
then score them with best-of-N SSIM on held-out single-digit sequences.

    python scripts/run_ordering.py --steps 15000 --out runs/ordering

Training resumes from ``<out>/<mode>/last.ckpt`` when present, so the script
can be interrupted and restarted.  Results land in ``<out>/summary.json`` and
per-mode curve CSVs and sample sheets.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from threadpoolctl import threadpool_limits

from svglp.data import load_pool
from svglp.experiments import ORDERING_MODES, ORDERING_STEPS, score_ordering, train_ordering_model


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=ORDERING_STEPS)
    ap.add_argument("--out", default="runs/ordering")
    ap.add_argument("--mnist-dir", default="data/mnist")
    ap.add_argument("--modes", nargs="+", default=list(ORDERING_MODES), choices=ORDERING_MODES)
    ap.add_argument("--n-sequences", type=int, default=64)
    ap.add_argument("--n-samples", type=int, default=20)
    ap.add_argument("--eval-only", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    logging.getLogger("svglp.training").setLevel(logging.WARNING)
    out = Path(args.out)
    with threadpool_limits(1):
        if not args.eval_only:
            pool = load_pool(args.mnist_dir, "train", 14)
            for mode in args.modes:
                train_ordering_model(mode, args.steps, out, pool)
        scores = score_ordering(out, load_pool(args.mnist_dir, "test", 14),
                                args.n_sequences, args.n_samples)
    for mode, s in scores.items():
        print(f"{mode:>4}  step {s.step:>6}  SSIM(steps 8-10) {s.window_ssim:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
