#!/usr/bin/env python3
"""Fetch MNIST / Fashion-MNIST as raw (uncompressed) IDX files.

Usage:
    python3 tools/fetch_mnist.py [--dataset mnist|fmnist] [--out data/mnist]

Tries the canonical IDX mirrors first. For MNIST, if none is reachable it
falls back to the `mnist` npm package (about 10k original MNIST digits stored
as pixel/255 floats) and re-encodes those as IDX train files.
"""

import argparse
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request

MIRRORS = {
    "mnist": [
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
    ],
    "fmnist": [
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    ],
}

FILES = {
    "train-images-idx3-ubyte": "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte": "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte": "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte": "t10k-labels-idx1-ubyte.gz",
}


def try_mirrors(dataset, out):
    for base in MIRRORS[dataset]:
        try:
            for raw, gz in FILES.items():
                with urllib.request.urlopen(base + gz, timeout=20) as resp:
                    payload = gzip.decompress(resp.read())
                with open(os.path.join(out, raw), "wb") as fh:
                    fh.write(payload)
            print(f"fetched {dataset} from {base}")
            return True
        except Exception as exc:  # noqa: BLE001
            print(f"mirror {base} unavailable: {exc}", file=sys.stderr)
    return False


def write_idx(out, images, labels, rows, cols):
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            fh.write(bytes(img))
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))


def from_npm(out):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        tgz = [f for f in os.listdir(tmp) if f.endswith(".tgz")][0]
        with tarfile.open(os.path.join(tmp, tgz)) as tar:
            tar.extractall(tmp)
        per_digit = []
        for digit in range(10):
            path = os.path.join(tmp, "package", "src", "digits", f"{digit}.json")
            with open(path) as fh:
                data = json.load(fh)["data"]
            n = len(data) // 784
            per_digit.append([
                [max(0, min(255, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
                for i in range(n)
            ])
    # Interleave digits so the file resembles the mixed ordering of the
    # canonical distribution.
    images, labels = [], []
    longest = max(len(d) for d in per_digit)
    for i in range(longest):
        for digit, samples in enumerate(per_digit):
            if i < len(samples):
                images.append(samples[i])
                labels.append(digit)
    write_idx(out, images, labels, 28, 28)
    print(f"wrote {len(images)} MNIST digits from the npm package to {out}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", default="mnist", choices=["mnist", "fmnist"])
    ap.add_argument("--out", default=None)
    ap.add_argument("--offline-fallback-only", action="store_true")
    args = ap.parse_args()
    out = args.out or os.path.join("data", args.dataset)
    os.makedirs(out, exist_ok=True)
    if not args.offline_fallback_only and try_mirrors(args.dataset, out):
        return 0
    if args.dataset == "mnist":
        from_npm(out)
        return 0
    print("no source reachable for fmnist", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
