#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package into IDX files.

The package bundles 10,000 MNIST digits as normalized floats with three
decimals. Pixels are mapped back to bytes with round(v * 255), the samples are
shuffled with a fixed seed and split into a train and a test file pair.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_idx.py package/src/digits data/mnist
"""
import argparse
import json
import pathlib
import struct

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        raw = json.loads((pathlib.Path(args.digits_dir) / f"{d}.json").read_text())["data"]
        arr = np.asarray(raw, dtype=np.float64).reshape(-1, 784)
        images.append(np.clip(np.rint(arr * 255.0), 0, 255))
        labels.append(np.full(len(arr), d))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_train = len(labels) - args.test

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[:n_train])
    write_labels(out / "train-labels-idx1-ubyte", labels[:n_train])
    write_images(out / "t10k-images-idx3-ubyte", images[n_train:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"train {n_train}, test {len(labels) - n_train}")


if __name__ == "__main__":
    main()
