"""Fuzzy c-means clustering with the fuzzy partition coefficient.

Centroids are membership-weighted means::

    c_j = sum_i u_ij^m x_i / sum_i u_ij^m

and memberships are inverse-distance ratios::

    u_ij = 1 / sum_k (d_ij / d_ik)^(2 / (m - 1))

iterated from a seeded random partition until the largest membership change
drops below ``tol``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClusterError


@dataclass(frozen=True)
class FcmConfig:
    c: int = 7
    m: float = 1.8
    tol: float = 1e-5
    max_iter: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ValueError("need at least 2 clusters")
        if not self.m > 1:
            raise ValueError("fuzziness m must be > 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class FcmResult:
    centroids: np.ndarray  # [c, d]
    u: np.ndarray  # [n, c]
    m: float
    iterations: int
    fpc: float

    @property
    def labels(self):
        return self.u.argmax(axis=1)


def initial_partition(n, c, seed=0):
    """Uniform random memberships, each row normalized to sum to 1."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(n, c))
    return u / u.sum(axis=1, keepdims=True)


def update_centroids(points, u, m):
    x = np.asarray(points, dtype=np.float64)
    w = np.asarray(u, dtype=np.float64) ** m
    mass = w.sum(axis=0)
    if np.any(mass <= 0):
        empty = np.flatnonzero(mass <= 0).tolist()
        raise DegenerateClusterError(f"clusters {empty} have no membership mass")
    # offsets from one data point keep coincident points exactly on their centroid
    origin = x[0]
    return origin + (w.T @ (x - origin)) / mass[:, None]


def update_memberships(points, centroids, m):
    x = np.asarray(points, dtype=np.float64)
    cen = np.asarray(centroids, dtype=np.float64)
    d = np.sqrt(((x[:, None, :] - cen[None, :, :]) ** 2).sum(axis=2))
    zero = d == 0
    hit = zero.any(axis=1)
    u = np.empty_like(d)
    rest = ~hit
    if rest.any():
        # ratios to the nearest centroid stay in (0, 1], so nothing overflows
        r = d[rest] / d[rest].min(axis=1, keepdims=True)
        inv = r ** (-2.0 / (m - 1))
        u[rest] = inv / inv.sum(axis=1, keepdims=True)
    if hit.any():
        # the formula's limit: share membership equally among coincident centroids
        z = zero[hit].astype(np.float64)
        u[hit] = z / z.sum(axis=1, keepdims=True)
    return u


def fpc(u):
    """Partition coefficient: mean over points of the summed squared memberships."""
    u = np.asarray(u, dtype=np.float64)
    return float((u * u).sum() / u.shape[0])


def fcm_fit(points, config=None, u0=None):
    """Alternate centroid and membership updates until ``max|dU| < tol``."""
    config = config or FcmConfig()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < config.c:
        raise ValueError(f"need at least c={config.c} points, got {n}")
    u = initial_partition(n, config.c, config.seed) if u0 is None else np.array(u0, dtype=np.float64)
    centroids = update_centroids(x, u, config.m)
    it = 0
    for it in range(1, config.max_iter + 1):
        new_u = update_memberships(x, centroids, config.m)
        delta = np.abs(new_u - u).max()
        u = new_u
        centroids = update_centroids(x, u, config.m)
        if delta < config.tol:
            break
    return FcmResult(centroids, u, config.m, it, fpc(u))


def sweep(points, cs, config=None):
    """FPC for each cluster count in ``cs``; returns ``[(c, fpc), ...]``."""
    config = config or FcmConfig()
    out = []
    for c in cs:
        cfg = FcmConfig(c=c, m=config.m, tol=config.tol, max_iter=config.max_iter, seed=config.seed)
        out.append((c, fcm_fit(points, cfg).fpc))
    return out
