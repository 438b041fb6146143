"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``CISHMAP_BACKEND=python`` is set. Every function here has a twin with the
same signature in ``_ckernels.pyx``.

Array layout is NCHW throughout. Convolution weights are ``[out, in, k, k]``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

NAME = "python"

_CROSS = ndimage.generate_binary_structure(2, 1)


def _windows(x, k, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, pad):
    """Cross-correlate ``x`` [N,C,H,W] with ``w`` [O,C,k,k]; no bias."""
    k = w.shape[2]
    win = _windows(x, k, stride, pad)  # [N, C, Ho, Wo, k, k]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [N, Ho, Wo, O]
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward_input(gy, w, in_hw, stride, pad):
    """Scatter ``gy`` [N,O,Ho,Wo] back through ``w`` to an input of size ``in_hw``.

    This is also the forward map of a transpose convolution whose weight is
    ``w`` read as ``[in, out, k, k]``.
    """
    n, _, ho, wo = gy.shape
    c, k = w.shape[1], w.shape[2]
    h, wd = in_hw
    cols = np.tensordot(gy, w, axes=([1], [0]))  # [N, Ho, Wo, C, k, k]
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # [N, C, k, k, Ho, Wo]
    hp = max(h + 2 * pad, (ho - 1) * stride + k)
    wp = max(wd + 2 * pad, (wo - 1) * stride + k)
    gx = np.zeros((n, c, hp, wp), dtype=gy.dtype)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + stride * (ho - 1) + 1:stride,
               j:j + stride * (wo - 1) + 1:stride] += cols[:, :, i, j]
    return np.ascontiguousarray(gx[:, :, pad:pad + h, pad:pad + wd])


def conv2d_backward_weight(x, gy, k, stride, pad):
    """Weight cotangent ``[O, C, k, k]`` for ``conv2d_forward(x, w)``."""
    win = _windows(x, k, stride, pad)  # [N, C, Ho, Wo, k, k]
    return np.ascontiguousarray(
        np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3])))


def maxpool_forward(x, size):
    """Non-overlapping max pool; returns values and flat in-window argmax."""
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    blocks = (x.reshape(n, c, ho, size, wo, size)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, ho, wo, size * size))
    idx = blocks.argmax(axis=-1)  # first max in row-major scan order
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int32)


def maxpool_backward(gy, idx, size):
    n, c, ho, wo = gy.shape
    blocks = np.zeros((n, c, ho, wo, size * size), dtype=gy.dtype)
    np.put_along_axis(blocks, idx[..., None].astype(np.intp), gy[..., None],
                      axis=-1)
    gx = (blocks.reshape(n, c, ho, wo, size, size)
          .transpose(0, 1, 2, 4, 3, 5)
          .reshape(n, c, ho * size, wo * size))
    return np.ascontiguousarray(gx)


def reconstruct(seed, mask):
    """Geodesic dilation of ``seed`` inside ``mask`` to fixpoint, 4-connected."""
    seed = np.asarray(seed, dtype=bool) & np.asarray(mask, dtype=bool)
    return ndimage.binary_propagation(seed, structure=_CROSS, mask=mask)
