#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the test suite.

Source: the `mnist` npm package, which ships 10,000 MNIST digits
(1,000 per class) as JSON with pixels normalized to [0, 1] and rounded
to three decimals. Pixels are mapped back to u8 with round(v * 255),
which recovers the original byte values.

Output (gzip-compressed IDX, standard big-endian headers):
    data/mnist/train-images-idx3-ubyte.gz   8,000 images
    data/mnist/train-labels-idx1-ubyte.gz
    data/mnist/test-images-idx3-ubyte.gz    2,000 images
    data/mnist/test-labels-idx1-ubyte.gz

Each class is split 800/200 after a seeded shuffle.

Usage: python3 scripts/prepare_mnist_subset.py [--package-dir DIR]
If --package-dir is omitted the package is fetched with `npm pack mnist`.
"""

import argparse
import gzip
import json
import os
import struct
import subprocess
import tarfile
import tempfile

import numpy as np

TRAIN_PER_CLASS = 800
SEED = 0


def fetch_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = [f for f in os.listdir(workdir) if f.endswith(".tgz")][0]
    with tarfile.open(os.path.join(workdir, tgz)) as tar:
        tar.extractall(workdir)
    return os.path.join(workdir, "package")


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--package-dir")
    parser.add_argument("--out-dir", default=os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "data", "mnist"))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package_dir or fetch_package(tmp)
        rng = np.random.default_rng(SEED)
        train_x, train_y, test_x, test_y = [], [], [], []
        for digit in range(10):
            with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
                pixels = np.array(json.load(f)["data"], dtype=np.float64)
            images = np.rint(pixels.reshape(-1, 784) * 255.0).clip(0, 255)
            order = rng.permutation(len(images))
            images = images[order]
            train_x.append(images[:TRAIN_PER_CLASS])
            test_x.append(images[TRAIN_PER_CLASS:])
            train_y += [digit] * TRAIN_PER_CLASS
            test_y += [digit] * (len(images) - TRAIN_PER_CLASS)

    def interleave(xs, ys):
        x = np.vstack(xs)
        y = np.array(ys)
        perm = rng.permutation(len(y))
        return x[perm], y[perm]

    tx, ty = interleave(train_x, train_y)
    vx, vy = interleave(test_x, test_y)
    os.makedirs(args.out_dir, exist_ok=True)
    write_images(os.path.join(args.out_dir, "train-images-idx3-ubyte.gz"), tx)
    write_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte.gz"), ty)
    write_images(os.path.join(args.out_dir, "test-images-idx3-ubyte.gz"), vx)
    write_labels(os.path.join(args.out_dir, "test-labels-idx1-ubyte.gz"), vy)
    print(f"train={len(ty)} test={len(vy)} -> {os.path.abspath(args.out_dir)}")


if __name__ == "__main__":
    main()
