"""Synthetic brightfield data for tests and demos.

Tiles and slides are bright backgrounds with dark round blobs standing in
for stained cells. Two texture classes exist: ``sparse`` (a few blobs per
tile) and ``dense`` (many).
"""

from dataclasses import dataclass

import numpy as np

BACKGROUND = 0.92
TISSUE = 0.78
BLOB = 0.42

# expected blobs per 300x300 area
DENSITY = {"sparse": 5.0, "dense": 55.0}


def _paint_blobs(img, rng, n, radius=(4.0, 9.0), value=BLOB, region=None):
    """Darken ``n`` discs into ``img`` in place; ``region`` limits centers."""
    h, w = img.shape
    placed = 0
    tries = 0
    while placed < n and tries < 50 * max(n, 1):
        tries += 1
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if region is not None and not region[int(cy), int(cx)]:
            continue
        r = rng.uniform(*radius)
        y0, y1 = max(int(cy - r - 2), 0), min(int(cy + r + 3), h)
        x0, x1 = max(int(cx - r - 2), 0), min(int(cx + r + 3), w)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx)
        # one-pixel soft edge
        alpha = np.clip(r + 0.5 - d, 0.0, 1.0)
        patch = img[y0:y1, x0:x1]
        np.minimum(patch, patch * (1 - alpha) + value * alpha, out=patch)
        placed += 1
    return img


def blob_tile(rng, kind, side=300, noise=0.01):
    """One ``side`` x ``side`` tile of the given texture class, values in [0, 1]."""
    if kind not in DENSITY:
        raise ValueError(f"kind must be one of {sorted(DENSITY)}")
    img = np.full((side, side), TISSUE, dtype=np.float64)
    # smaller tiles are shrunken copies: same blob count, scaled radii
    scale = side / 300.0
    n = rng.poisson(DENSITY[kind])
    _paint_blobs(img, rng, n, radius=(max(4.0 * scale, 1.2), max(9.0 * scale, 2.0)))
    img += rng.normal(0, noise, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def two_class_tiles(n, side=300, seed=0):
    """``n`` tiles alternating dense/sparse; returns ``(tiles [n,1,s,s], labels)``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    tiles = np.stack([blob_tile(rng, "dense" if lab == 0 else "sparse", side) for lab in labels])
    return tiles[:, None], labels


@dataclass
class SyntheticSlide:
    pixels: np.ndarray  # float32 [H, W] in [0, 1]
    truth: np.ndarray  # uint8 [H, W]: 0 background, 1 dense, 2 sparse, 3 hole, 4 speck
    ellipse: np.ndarray  # bool, tissue ellipse including the hole
    speck: np.ndarray  # bool

    def to_uint8(self):
        return np.round(self.pixels * 255).astype(np.uint8)


def make_slide(width=2400, height=2000, seed=0, noise=0.01):
    """A dark ellipse of tissue (dense left half, sparse right half) with a
    bright interior hole, plus a small dark speck far from it."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = 0.5 * height, 0.45 * width
    ay, ax = 0.36 * height, 0.38 * width
    ellipse = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
    hole_r = 0.06 * height
    hole = np.hypot(yy - cy, xx - cx) <= hole_r
    speck_r = 0.008 * height
    sy, sx = 0.08 * height, 0.93 * width
    speck = np.hypot(yy - sy, xx - sx) <= speck_r
    tissue = ellipse & ~hole
    dense = tissue & (xx < cx)
    sparse = tissue & (xx >= cx)

    img = np.full((height, width), BACKGROUND, dtype=np.float64)
    img[tissue] = TISSUE
    for region, kind in ((dense, "dense"), (sparse, "sparse")):
        n = int(region.sum() / 90000.0 * DENSITY[kind])
        _paint_blobs(img, rng, n, region=region)
    img[speck] = BLOB
    img += rng.normal(0, noise, img.shape)
    truth = np.zeros((height, width), dtype=np.uint8)
    truth[dense] = 1
    truth[sparse] = 2
    truth[hole] = 3
    truth[speck] = 4
    return SyntheticSlide(np.clip(img, 0, 1).astype(np.float32), truth, ellipse, speck)


def gradient_cloud(n=300, seed=0):
    """Points spread along a line segment in 2-D with small transverse jitter."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 1, n)
    return np.column_stack([t, 0.3 * t + rng.normal(0, 0.01, n)])
