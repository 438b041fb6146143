"""Independent reference implementations used as test oracles.

Each favours obviousness over speed: explicit loops, exact arithmetic where
ties matter, no shared code with the package.
"""

from collections import deque
from fractions import Fraction

import numpy as np

# -- morphology and thresholding ----------------------------------------------

NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def flood(start, allowed):
    """4-connected BFS from every True pixel of ``start`` within ``allowed``."""
    h, w = allowed.shape
    seen = np.zeros_like(allowed)
    queue = deque()
    for y, x in zip(*np.nonzero(start & allowed)):
        seen[y, x] = True
        queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for dy, dx in NEIGHBOURS:
            v, u = y + dy, x + dx
            if 0 <= v < h and 0 <= u < w and allowed[v, u] and not seen[v, u]:
                seen[v, u] = True
                queue.append((v, u))
    return seen


def fill_holes_oracle(m):
    border = np.zeros_like(m)
    border[[0, -1], :] = True
    border[:, [0, -1]] = True
    return ~flood(border, ~m)


def component_labels(m):
    """Union-find labelling with 4-connectivity."""
    h, w = m.shape
    parent = list(range(h * w))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for y in range(h):
        for x in range(w):
            if not m[y, x]:
                continue
            for v, u in ((y - 1, x), (y, x - 1)):
                if v >= 0 and u >= 0 and m[v, u]:
                    parent[find(y * w + x)] = find(v * w + u)
    labels = np.full((h, w), -1)
    for y in range(h):
        for x in range(w):
            if m[y, x]:
                labels[y, x] = find(y * w + x)
    return labels


def reconstruct_oracle(seed, m):
    labels = component_labels(m)
    hit = set(labels[seed & m].tolist())
    return np.isin(labels, list(hit)) & m


def erode_oracle(m, r):
    h, w = m.shape
    out = np.zeros_like(m)
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]
    for y in range(h):
        for x in range(w):
            out[y, x] = all(0 <= y + dy < h and 0 <= x + dx < w and m[y + dy, x + dx] for dy, dx in offsets)
    return out


def triangle_oracle(hist):
    """Exhaustive search using exact rational perpendicular distances."""
    hist = [int(v) for v in hist]
    nonzero = [i for i, v in enumerate(hist) if v]
    peak = max(range(len(hist)), key=lambda i: (hist[i], -i))
    lo, hi = nonzero[0], nonzero[-1]
    tail = lo if peak - lo > hi - peak else hi
    if tail == peak:
        return peak
    # perpendicular distance of a bar top to the chord is
    # (chord height - bar height) * |dx| / |chord|, positive below the chord
    dx, dy = tail - peak, hist[tail] - hist[peak]
    best, best_bin = None, None
    span = range(min(peak, tail), max(peak, tail) + 1)
    for b in span:
        line = Fraction(hist[peak]) + Fraction(dy * (b - peak), dx)
        dist = (line - hist[b]) * abs(dx)  # common positive factor 1/norm dropped
        closer_to_tail = best_bin is None or abs(b - tail) < abs(best_bin - tail)
        if best is None or dist > best or (dist == best and closer_to_tail):
            best, best_bin = dist, b
    return best_bin


# -- fuzzy c-means -----------------------------------------------------------

def naive_centroids(x, u, m):
    n, c = u.shape
    out = []
    for j in range(c):
        num = [0.0] * x.shape[1]
        den = 0.0
        for i in range(n):
            w = u[i, j] ** m
            den += w
            for k in range(x.shape[1]):
                num[k] += w * x[i, k]
        out.append([v / den for v in num])
    return np.array(out)


def naive_memberships(x, cen, m):
    n, c = len(x), len(cen)
    u = np.zeros((n, c))
    for i in range(n):
        d = [float(np.sqrt(sum((x[i, k] - cen[j, k]) ** 2 for k in range(x.shape[1])))) for j in range(c)]
        for j in range(c):
            u[i, j] = 1.0 / sum((d[j] / d[k]) ** (2.0 / (m - 1)) for k in range(c))
    return u


def naive_fit(x, u, m, iterations):
    cen = naive_centroids(x, u, m)
    for _ in range(iterations):
        u = naive_memberships(x, cen, m)
        cen = naive_centroids(x, u, m)
    return cen, u
