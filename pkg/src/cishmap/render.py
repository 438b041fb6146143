"""Class maps, latent scatter plots and loss curves.

Class maps are PNG rasters. Plots are standalone SVG documents written
directly, without a plotting library.
"""

import colorsys
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

from .errors import ShapeError

# Tableau-10; pairwise distinct and readable on white
DEFAULT_COLORS = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
)
BACKGROUND = (255, 255, 255)
UNCOVERED = -1


@dataclass
class Palette:
    colors: list
    background: tuple = BACKGROUND

    def __post_init__(self):
        self.colors = [tuple(int(v) for v in c) for c in self.colors]
        if len(set(self.colors)) != len(self.colors):
            raise ValueError("palette colors must be pairwise distinct")

    def __len__(self):
        return len(self.colors)

    @classmethod
    def default(cls, c):
        colors = list(DEFAULT_COLORS[:c])
        i = 0
        while len(colors) < c:
            # extra hues, skipping any that collide with existing colors
            r, g, b = colorsys.hsv_to_rgb((i * 0.61803398875) % 1.0, 0.65, 0.85)
            rgb = (round(r * 255), round(g * 255), round(b * 255))
            if rgb not in colors and rgb != BACKGROUND:
                colors.append(rgb)
            i += 1
        return cls(colors)

    @classmethod
    def parse(cls, text, c):
        """``"default"`` or a comma list of ``#rrggbb`` values."""
        text = text.strip()
        if text in ("", "default"):
            return cls.default(c)
        colors = []
        for item in text.split(","):
            item = item.strip().lstrip("#")
            if len(item) != 6:
                raise ValueError(f"bad palette color {item!r}; use #rrggbb")
            colors.append(tuple(int(item[i:i + 2], 16) for i in (0, 2, 4)))
        if len(colors) < c:
            raise ValueError(f"palette has {len(colors)} colors but {c} classes are needed")
        return cls(colors[:c])


def hex_color(rgb):
    return "#%02x%02x%02x" % tuple(rgb)


# -- class map -------------------------------------------------------------

def classmap(width, height, positions, memberships, side):
    """Per-pixel class ids from overlapping tiles.

    Each pixel takes the argmax (lowest index on ties) of the mean
    membership vector of the tiles covering it; uncovered pixels are
    ``UNCOVERED``. Tiles are summed in a canonical order, so the result does
    not depend on the order of ``positions``.
    """
    u = np.asarray(memberships, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(pos) != len(u):
        raise ValueError(f"{len(pos)} tile positions but {len(u)} membership rows")
    out = np.full((height, width), UNCOVERED, dtype=np.int32)
    if len(pos) == 0:
        return out
    for x, y in pos:
        if x < 0 or y < 0 or x + side > width or y + side > height:
            raise ShapeError(f"tile at ({x}, {y}) with side {side} lies outside {width}x{height}")
    order = np.lexsort([u[:, j] for j in range(u.shape[1] - 1, -1, -1)] + [pos[:, 0], pos[:, 1]])
    pos, u = pos[order], u[order]
    # tile edges cut the slide into cells with a constant covering set
    xs = np.unique(np.concatenate([[0, width], pos[:, 0], pos[:, 0] + side]))
    ys = np.unique(np.concatenate([[0, height], pos[:, 1], pos[:, 1] + side]))
    sums = np.zeros((len(ys) - 1, len(xs) - 1, u.shape[1]))
    count = np.zeros((len(ys) - 1, len(xs) - 1), dtype=np.int64)
    for (x, y), row in zip(pos, u):
        cx0, cx1 = np.searchsorted(xs, [x, x + side])
        cy0, cy1 = np.searchsorted(ys, [y, y + side])
        sums[cy0:cy1, cx0:cx1] += row
        count[cy0:cy1, cx0:cx1] += 1
    cell_class = np.where(count > 0, sums.argmax(axis=2), UNCOVERED)
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            if count[i, j]:
                out[ys[i]:ys[i + 1], xs[j]:xs[j + 1]] = cell_class[i, j]
    return out


def classmap_rgb(classes, palette):
    lut = np.array(list(palette.colors) + [palette.background], dtype=np.uint8)
    if classes.max(initial=-1) >= len(palette):
        raise ValueError(f"class id {classes.max()} has no palette color")
    return lut[np.where(classes == UNCOVERED, len(palette), classes)]


def render_classmap(path, width, height, positions, memberships, side, palette=None):
    """Write the color-coded class map PNG; returns the class-id array."""
    u = np.asarray(memberships)
    palette = palette or Palette.default(u.shape[1])
    classes = classmap(width, height, positions, u, side)
    Image.fromarray(classmap_rgb(classes, palette), mode="RGB").save(path)
    return classes


# -- svg plots ---------------------------------------------------------------

W, H = 640, 480
MARGIN = dict(left=70, right=20, top=40, bottom=55)


def axis_bounds(values, margin=0.05):
    """Data range padded by ``margin`` of its extent (unit span if degenerate)."""
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    if span == 0:
        return lo - 0.5, hi + 0.5
    return lo - margin * span, hi + margin * span


class _Frame:
    def __init__(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim
        self.x0, self.x1 = MARGIN["left"], W - MARGIN["right"]
        self.y0, self.y1 = MARGIN["top"], H - MARGIN["bottom"]

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.ylim
        return self.y1 - (y - lo) / (hi - lo) * (self.y1 - self.y0)

    def axes(self, title, xlabel, ylabel):
        out = [
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.x1 - self.x0}" '
            f'height="{self.y1 - self.y0}" fill="none" stroke="black"/>',
            f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
            f'<text x="{(self.x0 + self.x1) / 2}" y="{H - 12}" text-anchor="middle" '
            f'font-size="13">{escape(xlabel)}</text>',
            f'<text x="18" y="{(self.y0 + self.y1) / 2}" text-anchor="middle" font-size="13" '
            f'transform="rotate(-90 18 {(self.y0 + self.y1) / 2})">{escape(ylabel)}</text>',
        ]
        for i in range(5):
            fx = self.xlim[0] + i / 4 * (self.xlim[1] - self.xlim[0])
            fy = self.ylim[0] + i / 4 * (self.ylim[1] - self.ylim[0])
            out.append(f'<text x="{self.px(fx):.2f}" y="{self.y1 + 18}" text-anchor="middle" '
                       f'font-size="11">{fx:.3g}</text>')
            out.append(f'<text x="{self.x0 - 6}" y="{self.py(fy) + 4:.2f}" text-anchor="end" '
                       f'font-size="11">{fy:.3g}</text>')
        return out


def _document(body, xlim, ylim):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" data-xmin="{xlim[0]!r}" data-xmax="{xlim[1]!r}" '
            f'data-ymin="{ylim[0]!r}" data-ymax="{ylim[1]!r}">')
    return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', head,
                      f'<rect width="{W}" height="{H}" fill="white"/>', *body, "</svg>"]) + "\n"


def scatter_svg(latents, memberships, centroids=None, palette=None, title="Latent codes"):
    z = np.asarray(latents, dtype=np.float64).reshape(-1, 2)
    if len(z) == 0:
        raise ValueError("scatter plot needs at least one point")
    u = np.asarray(memberships, dtype=np.float64)
    labels = u.argmax(axis=1)
    palette = palette or Palette.default(u.shape[1])
    pts = z if centroids is None else np.vstack([z, np.asarray(centroids).reshape(-1, 2)])
    frame = _Frame(axis_bounds(pts[:, 0]), axis_bounds(pts[:, 1]))
    body = frame.axes(title, "z1", "z2")
    body.append('<g class="points">')
    for (a, b), k in zip(z, labels):
        body.append(f'<circle cx="{frame.px(a):.3f}" cy="{frame.py(b):.3f}" r="3" '
                    f'fill="{hex_color(palette.colors[k])}" data-class="{k}"/>')
    body.append("</g>")
    if centroids is not None:
        body.append('<g class="centroids">')
        for k, (a, b) in enumerate(np.asarray(centroids).reshape(-1, 2)):
            cx, cy = frame.px(a), frame.py(b)
            body.append(f'<path d="M{cx - 7:.3f} {cy - 7:.3f} L{cx + 7:.3f} {cy + 7:.3f} '
                        f'M{cx - 7:.3f} {cy + 7:.3f} L{cx + 7:.3f} {cy - 7:.3f}" stroke="black" '
                        f'stroke-width="2.5" data-class="{k}"/>')
        body.append("</g>")
    return _document(body, frame.xlim, frame.ylim)


def render_scatter(path, latents, memberships, centroids=None, palette=None):
    with open(path, "w") as fh:
        fh.write(scatter_svg(latents, memberships, centroids, palette))


def loss_curve_svg(histories, title="Training loss", ylabel="loss"):
    """One polyline per named history; ``histories`` maps label -> values."""
    if not isinstance(histories, dict):
        histories = {"loss": histories}
    for name, h in histories.items():
        if len(h) < 2:
            raise ValueError(f"loss history {name!r} needs at least 2 epochs, got {len(h)}")
    n = max(len(h) for h in histories.values())
    allv = np.concatenate([np.asarray(h, dtype=np.float64) for h in histories.values()])
    frame = _Frame(axis_bounds([1, n]), axis_bounds(allv))
    body = frame.axes(title, "epoch", ylabel)
    palette = Palette.default(len(histories))
    for k, (name, h) in enumerate(histories.items()):
        pts = " ".join(f"{frame.px(i + 1):.3f},{frame.py(v):.3f}" for i, v in enumerate(h))
        color = hex_color(palette.colors[k])
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2" '
                    f'data-label="{escape(name)}"/>')
        if len(histories) > 1:
            ly = frame.y0 + 16 + 16 * k
            body.append(f'<text x="{frame.x1 - 8}" y="{ly}" text-anchor="end" font-size="12" '
                        f'fill="{color}">{escape(name)}</text>')
    return _document(body, frame.xlim, frame.ylim)


def render_loss_curve(path, histories, **kw):
    with open(path, "w") as fh:
        fh.write(loss_curve_svg(histories, **kw))
