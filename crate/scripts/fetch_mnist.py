#!/usr/bin/env python3
"""Build an IDX-format MNIST subset from the `mnist` npm package.

The npm package ships 10,000 MNIST training digits (roughly 1,000 per class) as JSON
arrays of pixel intensities in [0, 1] rounded to three decimals. This script
fetches the tarball with `npm pack`, rescales pixels to bytes, shuffles the
samples with a fixed seed so any prefix is class-balanced, and writes

    data/mnist/images-idx3-ubyte   (magic 0x00000803)
    data/mnist/labels-idx1-ubyte   (magic 0x00000801)

Usage: python3 scripts/fetch_mnist.py [--out data/mnist]
"""
import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()

    samples = []
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            for label in range(10):
                member = tar.extractfile(f"package/src/digits/{label}.json")
                data = json.load(member)["data"]
                assert len(data) % 784 == 0
                for i in range(0, len(data), 784):
                    pixels = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784])
                    samples.append((pixels, label))

    random.Random(args.seed).shuffle(samples)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {out}")


if __name__ == "__main__":
    main()
