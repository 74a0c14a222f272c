#!/usr/bin/env python3
"""Build data/mnist/ from the 10,000 MNIST digits bundled in the `mnist` npm package.

The package ships one JSON file per digit with flattened 28x28 intensities in
[0, 1]. They are re-encoded as gzipped IDX files (the standard MNIST layout)
and split per class: the first 80% of each digit go to train, the rest to test.

    python3 scripts/fetch_mnist_subset.py [OUT_DIR]
"""
import gzip
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

TRAIN_FRACTION = 0.8


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(Path(tmp) / "mnist-1.1.0.tgz") as tar:
            tar.extractall(tmp)
        digits = Path(tmp) / "package" / "src" / "digits"
        train, test = [], []
        for d in range(10):
            flat = json.loads((digits / f"{d}.json").read_text())["data"]
            imgs = [
                [min(255, max(0, round(v * 255))) for v in flat[i:i + 784]]
                for i in range(0, len(flat), 784)
            ]
            cut = int(len(imgs) * TRAIN_FRACTION)
            train += [(img, d) for img in imgs[:cut]]
            test += [(img, d) for img in imgs[cut:]]
    for name, rows in (("train", train), ("t10k", test)):
        write_idx_images(out / f"{name}-images-idx3-ubyte.gz", [r[0] for r in rows])
        write_idx_labels(out / f"{name}-labels-idx1-ubyte.gz", [r[1] for r in rows])
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main()
