"""Write MNIST IDX files for the SM-MNIST generator.

Full MNIST cannot be downloaded in offline sandboxes, so this converts the
5,000-digit MNIST sample bundled with ``mlxtend`` (500 per class, sorted by
class) into the four standard IDX files: per class, the first 400 digits go
to the training split and the last 100 to the test split.  If you already have the original MNIST files, point
``data.mnist_dir`` (or SVG_DATA_ROOT) at them instead.
"""

import argparse
from pathlib import Path

import numpy as np

from svglp.data import (TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
                        write_mnist_idx)

TRAIN_PER_CLASS = 400


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist", help="output directory (default: %(default)s)")
    args = ap.parse_args(argv)
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    images = np.asarray(x, dtype=np.uint8).reshape(-1, 28, 28)
    labels = np.asarray(y, dtype=np.uint8)
    train = np.concatenate([np.flatnonzero(labels == k)[:TRAIN_PER_CLASS] for k in range(10)])
    test = np.concatenate([np.flatnonzero(labels == k)[TRAIN_PER_CLASS:] for k in range(10)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mnist_idx(out / TRAIN_IMAGES, images[train], out / TRAIN_LABELS, labels[train])
    write_mnist_idx(out / TEST_IMAGES, images[test], out / TEST_LABELS, labels[test])
    print(f"wrote {len(train)} train and {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
