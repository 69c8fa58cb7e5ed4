#!/usr/bin/env python3
"""Rebuild MNIST IDX files from the digits bundled in the `mnist` npm package.

The package stores 10 000 digits (about 1 000 per class) as 784-float rows
quantized to three decimals; round(v * 255) recovers the original byte.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Writes train-{images-idx3,labels-idx1}-ubyte (first 800 per class) and
t10k-{images-idx3,labels-idx1}-ubyte (the rest), interleaved by class.
"""
import json
import struct
import sys
from pathlib import Path

PIXELS = 784
TRAIN_PER_CLASS = 800


def write_idx(prefix: Path, images, labels):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def interleave(per_class):
    out_img, out_lab = [], []
    longest = max(len(v) for v in per_class)
    for i in range(longest):
        for label, rows in enumerate(per_class):
            if i < len(rows):
                out_img.append(rows[i])
                out_lab.append(label)
    return out_img, out_lab


def main(src: str, dst: str):
    src_dir, dst_dir = Path(src), Path(dst)
    dst_dir.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        flat = json.loads((src_dir / f"{digit}.json").read_text())["data"]
        rows = []
        for start in range(0, len(flat) - PIXELS + 1, PIXELS):
            px = [round(v * 255) for v in flat[start:start + PIXELS]]
            assert all(0 <= p <= 255 for p in px)
            rows.append(px)
        train.append(rows[:TRAIN_PER_CLASS])
        test.append(rows[TRAIN_PER_CLASS:])
    write_idx(dst_dir / "train", *interleave(train))
    write_idx(dst_dir / "t10k", *interleave(test))
    print(f"train={sum(map(len, train))} test={sum(map(len, test))} -> {dst_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
