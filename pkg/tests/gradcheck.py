"""Central finite differences, kept independent of the analytic backward code."""

import numpy as np


def numeric_grad(f, x, h, index=None):
    """d f / d x by central differences.

    ``f`` takes no arguments and reads ``x`` (mutated in place). The actual
    step taken is measured after rounding to ``x.dtype``. With ``index`` only
    those flat positions are probed; the rest stay NaN.
    """
    g = np.full(x.shape, np.nan)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        up = float(flat[i])
        fp = f()
        flat[i] = orig - h
        down = float(flat[i])
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (up - down)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def probe(fn, u):
    """Scalar objective ``<fn(), u>`` accumulated in float64."""
    return lambda: float(np.sum(np.asarray(fn(), dtype=np.float64) * u))


TOL = {np.float32: 1e-3, np.float64: 1e-6}
# float32 steps sit near the cube root of machine epsilon, where central
# difference rounding and truncation errors balance
STEP = {np.float32: 1e-2, np.float64: 1e-6}


def check_layer(layer, x, rng, dtype):
    """Compare analytic input and parameter gradients of ``layer`` against FD."""
    y = layer.forward(x)
    u = rng.standard_normal(y.shape)
    gx = layer.backward(u.astype(dtype))
    f = probe(lambda: layer.forward(x), u)
    h, tol = STEP[dtype], TOL[dtype]
    errs = {"input": rel_error(gx, numeric_grad(f, x, h))}
    for name, g in zip(layer.params, layer.gradients()):
        errs[name] = rel_error(g, numeric_grad(f, getattr(layer, name), h))
    bad = {k: v for k, v in errs.items() if not v < tol}
    assert not bad, f"relative errors above {tol}: {bad}"


def fill_small(layer, rng, dtype):
    # initialisation-sized weights keep outputs O(1), so float32 rounding of
    # the forward pass stays well below the finite-difference signal
    for name in layer.params:
        p = getattr(layer, name)
        scale = 1.0 / np.sqrt(layer.fan_in) if name == "weight" else 0.1
        p[...] = (scale * rng.standard_normal(p.shape)).astype(dtype)
