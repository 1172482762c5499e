"""Build the 1000/1000 MNIST subset under data/mnist/ as gzipped IDX files.

The source is the 5000-digit MNIST sample bundled in the mlxtend wheel
(``mlxtend/data/data/mnist_5k.csv.gz``: 784 pixel columns then the label).

    python3 scripts/make_mnist_subset.py path/to/mlxtend-*.whl
"""

import argparse
import gzip
import io
import os
import zipfile

import numpy as np

from tangent_rugosity.linalg import make_rng
from tangent_rugosity.manifold import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel")
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    data = np.loadtxt(io.StringIO(raw.decode()), delimiter=",", dtype=np.int64)
    pixels, labels = data[:, :784].astype(np.uint8), data[:, 784].astype(np.uint8)

    rng = make_rng(args.seed)
    train_idx, test_idx = [], []
    for c in range(10):
        members = rng.permutation(np.flatnonzero(labels == c))
        train_idx.append(members[: args.per_class])
        test_idx.append(members[args.per_class : 2 * args.per_class])
    os.makedirs(args.out, exist_ok=True)
    for tag, idx in (("train", np.concatenate(train_idx)), ("t10k", np.concatenate(test_idx))):
        idx = rng.permutation(idx)
        write_idx(os.path.join(args.out, f"{tag}-images-idx3-ubyte.gz"), pixels[idx].reshape(-1, 28, 28))
        write_idx(os.path.join(args.out, f"{tag}-labels-idx1-ubyte.gz"), labels[idx])
        print(f"{tag}: {idx.size} images")


if __name__ == "__main__":
    main()
