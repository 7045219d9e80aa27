#!/usr/bin/env python3
"""Convert SVHN cropped-digit .mat files to grayscale IDX files.

Usage: svhn_to_idx.py train_32x32.mat OUT_DIR [--prefix train]

Writes OUT_DIR/<prefix>-images-idx3-ubyte and <prefix>-labels-idx1-ubyte.
Label 10 (the digit zero) becomes 0. Grayscale uses the same integer
luminance weights as the C++ loader (0.299, 0.587, 0.114, rounded).
"""

import argparse
import pathlib
import struct

import numpy as np
import scipy.io


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mat")
    ap.add_argument("out_dir")
    ap.add_argument("--prefix", default="train")
    args = ap.parse_args()

    m = scipy.io.loadmat(args.mat)
    rgb = m["X"].astype(np.float64)  # 32 x 32 x 3 x N
    gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    images = np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8).transpose(2, 0, 1)
    labels = m["y"].reshape(-1).astype(np.int64) % 10

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, rows, cols = images.shape
    with open(out / f"{args.prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, rows, cols))
        f.write(np.ascontiguousarray(images).tobytes())
    with open(out / f"{args.prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())
    print(f"wrote {n} images of {rows}x{cols}")


if __name__ == "__main__":
    main()
