"""Overlapping square tiles restricted to tissue, and the on-disk tile store."""

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .masking import GrayImage, Mask

logger = logging.getLogger(__name__)

TILE_MAGIC = b"CTIL"
TILE_VERSION = 1


@dataclass(frozen=True)
class TileSpec:
    tile_side: int = 300
    stride: int = 150
    min_tissue_fraction: float = 0.25

    def __post_init__(self):
        if not 0 < self.stride <= self.tile_side:
            raise ValueError(f"need 0 < stride <= tile_side, got stride={self.stride}, "
                             f"tile_side={self.tile_side}")
        if not 0 <= self.min_tissue_fraction <= 1:
            raise ValueError("min_tissue_fraction must lie in [0, 1]")


@dataclass
class Tile:
    x: int
    y: int
    pixels: np.ndarray  # float32 [1, side, side]
    tissue_fraction: float


def enumerate_positions(width, height, spec=None):
    """Top-left corners of every tile fully inside the slide, row-major."""
    spec = spec or TileSpec()
    side, step = spec.tile_side, spec.stride
    if width < side or height < side:
        logger.warning("slide %dx%d is smaller than one %dpx tile", width, height, side)
        return []
    xs = range(0, width - side + 1, step)
    ys = range(0, height - side + 1, step)
    return [(x, y) for y in ys for x in xs]


def extract_tiles(slide, mask, spec=None):
    """Cut the tiles whose tissue fraction reaches ``spec.min_tissue_fraction``."""
    spec = spec or TileSpec()
    pixels = slide.pixels if isinstance(slide, GrayImage) else np.asarray(slide)
    bits = mask.bits if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if pixels.shape != bits.shape:
        raise ShapeError(f"mask shape {bits.shape} != slide shape {pixels.shape}")
    h, w = pixels.shape
    side = spec.tile_side
    # summed-area table gives each footprint's tissue count in O(1)
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(bits, axis=0), axis=1, out=sat[1:, 1:])
    area = side * side
    tiles = []
    for x, y in enumerate_positions(w, h, spec):
        count = sat[y + side, x + side] - sat[y, x + side] - sat[y + side, x] + sat[y, x]
        frac = count / area
        if count == 0 or frac < spec.min_tissue_fraction:
            continue
        window = np.array(pixels[y:y + side, x:x + side], dtype=np.float32)[None]
        tiles.append(Tile(x, y, window, float(frac)))
    return tiles


def stack(tiles):
    return np.stack([t.pixels for t in tiles]) if tiles else np.empty((0, 1, 0, 0), np.float32)


# -- tile store ---------------------------------------------------------

def save_tiles(tiles, manifest_path, data_path, side):
    """Manifest: JSON lines ``{id, x, y, tissue_fraction}``.

    Data: magic ``CTIL``, u16 version, u32 count, u32 side, then float32
    little-endian pixels, tiles concatenated in manifest order.
    """
    with open(manifest_path, "w") as fh:
        for i, t in enumerate(tiles):
            fh.write(json.dumps({"id": i, "x": t.x, "y": t.y,
                                 "tissue_fraction": t.tissue_fraction}) + "\n")
    with open(data_path, "wb") as fh:
        fh.write(TILE_MAGIC)
        fh.write(struct.pack("<HII", TILE_VERSION, len(tiles), side))
        for t in tiles:
            if t.pixels.shape != (1, side, side):
                raise ShapeError(f"tile at ({t.x}, {t.y}) has shape {t.pixels.shape}")
            fh.write(np.ascontiguousarray(t.pixels, dtype="<f4").tobytes())


def read_manifest(manifest_path):
    with open(manifest_path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_tiles(manifest_path, data_path):
    """Return ``(records, pixels [N, 1, side, side])``."""
    records = read_manifest(manifest_path)
    with open(data_path, "rb") as fh:
        head = fh.read(14)
        if len(head) != 14 or head[:4] != TILE_MAGIC:
            raise ValueError(f"{data_path} is not a tile data file")
        version, count, side = struct.unpack("<HII", head[4:])
        if version != TILE_VERSION:
            raise ValueError(f"unsupported tile data version {version}")
        if count != len(records):
            raise ValueError(f"tile data holds {count} tiles, manifest lists {len(records)}")
        raw = fh.read()
    expected = count * side * side * 4
    if len(raw) != expected:
        raise ValueError(f"tile data payload is {len(raw)} bytes, expected {expected}")
    pixels = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(count, 1, side, side)
    return records, pixels
