"""Build the 10k-digit MNIST subset used by the desk-scale experiments.

Source: the digit JSON files shipped in the npm ``mnist`` package
(10,000 MNIST digits stored as 784 floats in [0, 1] with three decimals).
Writes gzipped IDX files with an 8000/2000 train/test split.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist_subset.py package/src/digits data/mnist-subset
"""

import argparse
import json
import os

import numpy as np

from bbh.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as fh:
            raw = np.asarray(json.load(fh)["data"], dtype=np.float64).reshape(-1, 784)
        images.append(np.clip(np.round(raw * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images).reshape(-1, 28, 28)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    test, train = order[: args.n_test], order[args.n_test :]

    os.makedirs(args.out_dir, exist_ok=True)
    for split, idx in (("train", train), ("test", test)):
        write_idx(os.path.join(args.out_dir, f"{split}-images-idx3-ubyte.gz"), images[idx])
        write_idx(os.path.join(args.out_dir, f"{split}-labels-idx1-ubyte.gz"), labels[idx])
        print(f"{split}: {len(idx)} images")


if __name__ == "__main__":
    main()
