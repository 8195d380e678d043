#!/usr/bin/env python3
# Copyright 2026 The ovfsim Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Converts the 10k-digit MNIST subset shipped by the npm `mnist` package to
gzipped IDX files (8000 train / 2000 test, fixed shuffle).

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    tools/mnist_subset_to_idx.py package/src/digits data/
"""
import argparse
import gzip
import json
import random
import struct
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archives byte-stable across regenerations.
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header + payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        data = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        for i in range(len(data) // 784):
            pix = bytes(round(v * 255) for v in data[i * 784:(i + 1) * 784])
            samples.append((pix, digit))
    random.Random(args.seed).shuffle(samples)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:args.train]), ("test", samples[args.train:])):
        write_idx(args.out_dir / f"mnist10k-{name}-images-idx3-ubyte.gz", 0x803,
                  (len(part), 28, 28), b"".join(p for p, _ in part))
        write_idx(args.out_dir / f"mnist10k-{name}-labels-idx1-ubyte.gz", 0x801,
                  (len(part),), bytes(l for _, l in part))
        print(f"{name}: {len(part)} samples")


if __name__ == "__main__":
    main()
