#!/usr/bin/env python3
"""Generate a synthetic handwritten-digit stand-in corpus (classes 0 and 1).

Zeros are jittered elliptical rings, ones are jittered slanted strokes, both
rendered at 28x28 with soft edges so the downsampling path has real gray
levels to average. The corpus is written as a standard IDX image/label pair,
so the full ingestion path (magic checks, dimension parsing, cropping,
pooling) is exercised exactly as it would be on the real dataset.
"""

import argparse
from pathlib import Path

import numpy as np

from oscsgm.data import make_idx, save_idx

SIDE = 28


def _coords():
    r = np.arange(SIDE, dtype=np.float64)
    return np.meshgrid(r, r, indexing="ij")


def render_zero(rng: np.random.Generator) -> np.ndarray:
    rows, cols = _coords()
    cr = 13.5 + rng.uniform(-1.5, 1.5)
    cc = 13.5 + rng.uniform(-1.5, 1.5)
    a = rng.uniform(6.5, 9.0)   # vertical semi-axis
    b = rng.uniform(4.5, 7.0)   # horizontal semi-axis
    thick = rng.uniform(2.0, 3.2)
    tilt = rng.uniform(-0.15, 0.15)
    dr = rows - cr
    dc = cols - cc + tilt * dr
    radial = np.sqrt((dr / a) ** 2 + (dc / b) ** 2)
    # distance from the unit ellipse in pixel-ish units
    dist = np.abs(radial - 1.0) * 0.5 * (a + b)
    img = np.clip(1.0 - dist / thick, 0.0, 1.0) ** 0.8
    peak = rng.uniform(190, 255)
    return (img * peak).astype(np.uint8)


def render_one(rng: np.random.Generator) -> np.ndarray:
    rows, cols = _coords()
    top = rng.uniform(4.0, 7.0)
    bottom = rng.uniform(21.0, 24.0)
    center = 13.5 + rng.uniform(-2.5, 2.5)
    slant = rng.uniform(-0.18, 0.18)
    width = rng.uniform(1.6, 2.8)
    axis = center + slant * (rows - 0.5 * (top + bottom))
    dist = np.abs(cols - axis)
    inside = (rows >= top) & (rows <= bottom)
    img = np.clip(1.0 - dist / width, 0.0, 1.0) ** 0.8 * inside
    if rng.uniform() < 0.5:
        # short flag at the top, like a handwritten 1
        fr = rows - top
        flag = np.clip(1.0 - np.abs(fr + (cols - axis) * 0.9) / 1.4, 0, 1)
        flag *= (cols < axis + 0.5) & (cols > axis - 5.0) & (rows < top + 4)
        img = np.maximum(img, flag)
    peak = rng.uniform(190, 255)
    return (img * peak).astype(np.uint8)


def build_corpus(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """count images, labels drawn 50/50, deterministic in seed."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=count).astype(np.uint8)
    images = np.empty((count, SIDE, SIDE), dtype=np.uint8)
    for i, lab in enumerate(labels):
        images[i] = render_one(rng) if lab else render_zero(rng)
    return images, labels


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=2400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default=".")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = build_corpus(args.count, args.seed)
    save_idx(make_idx(images, "images"), out / "digits-images.idx")
    save_idx(make_idx(labels, "labels"), out / "digits-labels.idx")
    print(f"wrote {args.count} images to {out}/digits-images.idx (+labels)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
