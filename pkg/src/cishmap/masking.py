"""Tissue masks for brightfield whole-slide images.

Pipeline (on a downscaled copy of the slide): Gaussian blur, triangle
threshold, fill holes, then keep only the connected components reached by a
large-radius erosion of the filled mask. The result is upscaled back to the
slide's resolution by nearest neighbour.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from . import kernels
from .errors import NoTissueError, ShapeError

DEFAULT_SCALE = 0.5  # um per pixel


@dataclass
class GrayImage:
    pixels: np.ndarray  # float32 [H, W], values in [0, 1]
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ShapeError(f"gray image must be 2-D, got shape {self.pixels.shape}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class Mask:
    bits: np.ndarray  # bool [H, W]; True = tissue
    scale: float = DEFAULT_SCALE

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]


@dataclass
class MaskParams:
    downscale: int = 8
    sigma: float = 2.0
    erosion_radius: int = 20
    dark_tissue: bool = True


def _bits(m):
    return m.bits if isinstance(m, Mask) else np.asarray(m, dtype=bool)


def _like(template, bits):
    if isinstance(template, Mask):
        return Mask(bits, template.scale)
    return bits


# -- io ------------------------------------------------------------------

def to_grayscale(rgb, scale=DEFAULT_SCALE):
    """Luma (0.299 R + 0.587 G + 0.114 B) of an 8-bit image, scaled to [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return GrayImage((rgb / 255.0).astype(np.float32), scale)
    if rgb.ndim != 3 or rgb.shape[2] not in (3, 4):
        raise ShapeError(f"unsupported channel count for image of shape {rgb.shape}")
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    gray = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
    return GrayImage(gray.astype(np.float32), scale)


def load_image(path, scale=DEFAULT_SCALE):
    """Read an 8-bit grayscale or RGB PNG as a :class:`GrayImage`."""
    with Image.open(path) as im:
        if im.mode in ("L", "RGB", "RGBA"):
            arr = np.asarray(im)
        elif im.mode == "P":
            arr = np.asarray(im.convert("RGB"))
        else:
            raise ShapeError(f"unsupported image mode {im.mode!r} in {path}")
    return to_grayscale(arr, scale)


def save_mask(mask, path, info=None):
    """Write ``mask`` as a {0, 255} PNG and, with ``info``, a JSON sidecar."""
    Image.fromarray(np.where(_bits(mask), 255, 0).astype(np.uint8), mode="L").save(path)
    if info is not None:
        with open(_sidecar(path), "w") as fh:
            json.dump(info, fh, indent=2, sort_keys=True)


def load_mask(path, scale=DEFAULT_SCALE):
    with Image.open(path) as im:
        bits = np.asarray(im.convert("L")) > 127
    return Mask(bits, scale)


def _sidecar(path):
    path = str(path)
    return (path[:-4] if path.endswith(".png") else path) + ".json"


# -- filters ---------------------------------------------------------------

def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(a, k, axis):
    r = len(k) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    n = a.shape[axis]
    for i, wt in enumerate(k):
        out += wt * (p[i:i + n] if axis == 0 else p[:, i:i + n])
    return out


def gaussian_blur(img, sigma):
    """Separable Gaussian blur, radius ceil(3 sigma), clamp-to-edge borders."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    k = gaussian_kernel(sigma)
    out = _blur_axis(_blur_axis(pixels.astype(np.float64), k, 0), k, 1)
    out = out.astype(np.float32)
    return GrayImage(out, img.scale) if isinstance(img, GrayImage) else out


def histogram(img, bins=256):
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    levels = np.clip(np.rint(pixels * (bins - 1)), 0, bins - 1).astype(np.intp)
    return np.bincount(levels.ravel(), minlength=bins)


def triangle_threshold(hist):
    """Triangle (Zack) threshold of a histogram.

    The chord runs from the peak to the farthest non-empty bin on the longer
    tail. The bin between them with the greatest perpendicular distance below
    the chord is returned; ties go to the bin nearest the tail end.
    """
    h = np.asarray(hist, dtype=np.int64)
    nz = np.flatnonzero(h)
    if nz.size == 0:
        raise ValueError("histogram is empty")
    peak = int(np.argmax(h))
    first, last = int(nz[0]), int(nz[-1])
    tail = first if peak - first > last - peak else last
    if tail == peak:
        return peak
    step = 1 if tail > peak else -1
    b = np.arange(tail, peak, -step)  # tail end first, so argmax ties favour it
    # cross product of (chord) x (point - peak); positive below the chord
    dx, dy = tail - peak, h[tail] - h[peak]
    dist = (b - peak) * dy - (h[b] - h[peak]) * dx
    if step < 0:
        dist = -dist
    return int(b[int(np.argmax(dist))])


# -- binary morphology -----------------------------------------------------

def reconstruct(seed, mask):
    """Morphological reconstruction by 4-connected geodesic dilation.

    Returns the union of the components of ``mask`` that touch ``seed``.
    """
    s, m = _bits(seed), _bits(mask)
    if s.shape != m.shape:
        raise ShapeError(f"seed shape {s.shape} != mask shape {m.shape}")
    return _like(mask, kernels.reconstruct(s & m, m))


def fill_holes(mask):
    """Set to tissue every background region not 4-connected to the border."""
    m = _bits(mask)
    bg = ~m
    border = np.zeros_like(bg)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    outside = kernels.reconstruct(border & bg, bg)
    return _like(mask, ~outside)


def disk_offsets(radius):
    """Half-widths of a digital disk: for each dy, max |dx| with dx^2 + dy^2 <= r^2."""
    return {dy: math.isqrt(radius * radius - dy * dy) for dy in range(-radius, radius + 1)}


def erode(mask, radius):
    """Binary erosion by a disk; pixels beyond the image count as background."""
    if radius < 1:
        raise ValueError("erosion radius must be >= 1")
    m = _bits(mask)
    h, w = m.shape
    r = int(radius)
    p = np.pad(m, r, constant_values=False)
    cs = np.zeros((h + 2 * r, w + 2 * r + 1), dtype=np.int32)
    np.cumsum(p, axis=1, out=cs[:, 1:])
    out = np.ones((h, w), dtype=bool)
    cols = np.arange(w) + r
    for dy, half in disk_offsets(r).items():
        rows = cs[r + dy:r + dy + h]
        count = rows[:, cols + half + 1] - rows[:, cols - half]
        out &= count == 2 * half + 1
    return _like(mask, out)


# -- scale changes ---------------------------------------------------------

def downscale(img, factor):
    """Block-mean downscale; ragged edges are averaged over the pixels present."""
    pixels = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    h, w = pixels.shape
    hh, ww = -(-h // factor), -(-w // factor)
    padded = np.zeros((hh * factor, ww * factor), dtype=np.float64)
    weight = np.zeros_like(padded)
    padded[:h, :w] = pixels
    weight[:h, :w] = 1
    s = padded.reshape(hh, factor, ww, factor).sum(axis=(1, 3))
    n = weight.reshape(hh, factor, ww, factor).sum(axis=(1, 3))
    out = (s / n).astype(np.float32)
    if isinstance(img, GrayImage):
        return GrayImage(out, img.scale * factor)
    return out


def upscale_mask(mask, factor, shape):
    """Nearest-neighbour upscale cropped to ``shape`` (height, width)."""
    m = _bits(mask)
    big = np.repeat(np.repeat(m, factor, axis=0), factor, axis=1)
    h, w = shape
    if big.shape[0] < h or big.shape[1] < w:
        raise ShapeError(f"upscaled mask {big.shape} smaller than target {shape}")
    out = big[:h, :w]
    if isinstance(mask, Mask):
        return Mask(np.ascontiguousarray(out), mask.scale / factor)
    return np.ascontiguousarray(out)


# -- composite ---------------------------------------------------------------

def build_mask(slide, params=None):
    """Tissue mask of ``slide`` at full resolution.

    Returns ``(mask, info)`` where ``info`` records the threshold bin and the
    parameters used.
    """
    params = params or MaskParams()
    if not isinstance(slide, GrayImage):
        slide = GrayImage(np.asarray(slide, dtype=np.float32))
    small = downscale(slide, params.downscale)
    blurred = gaussian_blur(small, params.sigma)
    level = triangle_threshold(histogram(blurred))
    bins = np.clip(np.rint(blurred.pixels * 255), 0, 255)
    tissue = bins < level if params.dark_tissue else bins > level
    filled = fill_holes(tissue)
    seed = erode(filled, params.erosion_radius)
    kept = reconstruct(seed, filled)
    if not kept.any():
        raise NoTissueError("no tissue found")
    full = upscale_mask(Mask(kept, small.scale), params.downscale, slide.pixels.shape)
    full.scale = slide.scale
    info = {
        "scale_um_per_px": slide.scale,
        "downscale_factor": params.downscale,
        "threshold_bin": level,
        "parameters": asdict(params),
    }
    return full, info
