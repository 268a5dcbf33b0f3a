#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package into IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package data/mnist

Writes train-images-idx3-ubyte and train-labels-idx1-ubyte (10000 images).
The digits are interleaved with a fixed permutation so that any prefix is
roughly class-balanced.
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> None:
    src = Path(sys.argv[1]) / "src" / "digits"
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        data = data.reshape(-1, 784)
        images.append(np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(20200101).permutation(len(images))
    images, labels = images[order], labels[order]

    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
