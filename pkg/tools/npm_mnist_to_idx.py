"""Convert the digits shipped in the npm ``mnist`` package into IDX files.

The npm package (``npm pack mnist``, v1.1.0) stores 10000 MNIST digits as
``src/digits/<d>.json`` with pixel intensities rounded to three decimals.
They are re-quantized to bytes with ``round(v * 255)`` and written as
gzipped IDX pairs so that the regular IDX loader can read them.

Usage::

    python tools/npm_mnist_to_idx.py path/to/package/src/digits data/mnist10k
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(digits_dir, out_dir):
    digits_dir, out_dir = Path(digits_dir), Path(out_dir)
    images, labels = [], []
    for d in range(10):
        flat = np.asarray(json.loads((digits_dir / f"{d}.json").read_text())["data"])
        block = flat.reshape(-1, 28, 28)
        images.append(np.clip(np.rint(block * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(block), d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    out_dir.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out_dir / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(out_dir / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.tobytes())
    print(f"wrote {len(images)} digits to {out_dir}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
