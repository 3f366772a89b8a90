#!/usr/bin/env python3
"""Re-encode the digits bundled in the `mnist` npm package as gzipped IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits crates/core/tests/data

The package ships ~1000 grayscale 28x28 digits per class as JSON arrays with
values in [0,1] rounded to three decimals. Samples are interleaved round-robin
across classes so any prefix of the output is close to class-balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

src, dst = Path(sys.argv[1]), Path(sys.argv[2])
per_class = []
for digit in range(10):
    flat = json.loads((src / f"{digit}.json").read_text())["data"]
    n = len(flat) // 784
    per_class.append([flat[i * 784:(i + 1) * 784] for i in range(n)])

images, labels = [], []
longest = max(len(c) for c in per_class)
for i in range(longest):
    for digit, samples in enumerate(per_class):
        if i < len(samples):
            images.append(samples[i])
            labels.append(digit)

img = bytearray(struct.pack(">IIII", 2051, len(images), 28, 28))
for sample in images:
    img.extend(min(255, max(0, round(v * 255))) for v in sample)
lab = bytearray(struct.pack(">II", 2049, len(labels)))
lab.extend(labels)

dst.mkdir(parents=True, exist_ok=True)
with gzip.GzipFile(dst / "mnist-10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(img)
with gzip.GzipFile(dst / "mnist-10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
    f.write(lab)
print(f"wrote {len(images)} images")
