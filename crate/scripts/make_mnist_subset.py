"""Convert the 5000-sample MNIST subset bundled with mlxtend into gzipped IDX files.

Usage: python3 scripts/make_mnist_subset.py <mlxtend wheel> <out dir>

Writes train (first 4000 after a seeded shuffle) and t10k (remaining 1000) splits.
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def write_idx(path, images, labels, prefix):
    n = images.shape[0]
    img = struct.pack(">IIII", 2051, n, 28, 28) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 2049, n) + labels.astype(np.uint8).tobytes()
    with gzip.GzipFile(f"{path}/{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(img)
    with gzip.GzipFile(f"{path}/{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(lab)


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    data = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    x, y = data[:, :-1], data[:, -1]
    perm = np.random.default_rng(0).permutation(len(y))
    x, y = x[perm], y[perm]
    write_idx(out, x[:4000], y[:4000], "train")
    write_idx(out, x[4000:], y[4000:], "t10k")


if __name__ == "__main__":
    main()
