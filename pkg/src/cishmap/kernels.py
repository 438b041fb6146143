"""Kernel backend selection.

The compiled Cython extension is preferred. Setting ``CISHMAP_BACKEND=python``
before import, or calling :func:`use_backend`, forces the numpy fallback.
"""

import importlib
import logging
import os

logger = logging.getLogger(__name__)

_BACKENDS = {"cython": "cishmap._ckernels", "python": "cishmap._pykernels"}


def _load(name):
    return importlib.import_module(_BACKENDS[name])


def available_backends():
    names = []
    for name in _BACKENDS:
        try:
            _load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _initial():
    wanted = os.environ.get("CISHMAP_BACKEND", "").strip().lower()
    if wanted == "python":
        return _load("python")
    try:
        return _load("cython")
    except ImportError:
        if wanted == "cython":
            raise
        logger.info("compiled kernels unavailable; using numpy fallback")
        return _load("python")


_impl = _initial()


def use_backend(name):
    """Switch every kernel call to backend ``name`` ("cython" or "python")."""
    global _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}")
    _impl = _load(name)


def backend_name():
    return _impl.NAME


def get(name=None):
    """Return the backend module ``name``, or the active one."""
    return _impl if name is None else _load(name)


def conv2d_forward(x, w, stride, pad):
    return _impl.conv2d_forward(x, w, stride, pad)


def conv2d_backward_input(gy, w, in_hw, stride, pad):
    return _impl.conv2d_backward_input(gy, w, tuple(in_hw), stride, pad)


def conv2d_backward_weight(x, gy, k, stride, pad):
    return _impl.conv2d_backward_weight(x, gy, k, stride, pad)


def maxpool_forward(x, size):
    return _impl.maxpool_forward(x, size)


def maxpool_backward(gy, idx, size):
    return _impl.maxpool_backward(gy, idx, size)


def reconstruct(seed, mask):
    return _impl.reconstruct(seed, mask)
