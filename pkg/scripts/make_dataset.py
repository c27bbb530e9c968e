#!/usr/bin/env python3
"""Generate a deterministic synthetic grayscale corpus as PGM files.

The images are piecewise-smooth mixtures of low-frequency sinusoids, bumps
and one soft edge, quantized to the 8-bit grid, so runs are reproducible
without any external dataset.

Example:
    python3 scripts/make_dataset.py --out data/train --count 10 --size 128 --seed 200
    python3 scripts/make_dataset.py --out data/test  --count 10 --size 64  --seed 300
"""
import argparse
from pathlib import Path

from graphdenoise import save_image, synthesize_image


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=10)
    parser.add_argument("--size", type=int, default=128, help="square image side in pixels")
    parser.add_argument("--seed", type=int, default=0, help="seed of the first image")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        path = out / f"synthetic_{args.seed + i:04d}.pgm"
        save_image(synthesize_image(args.size, args.size, seed=args.seed + i), path)
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
