"""Differentiable layers and losses for the autoencoder.

Arrays are plain numpy arrays (float32 for training, float64 only for
gradient checks). Image batches are NCHW; a single CHW image is accepted
wherever a batch is, and the result keeps the caller's rank.

Each functional ``*_forward`` has a matching ``*_backward`` that returns the
exact vector-Jacobian product. The ``Layer`` classes wrap those pairs and
cache what the backward pass needs.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

DEFAULT_LEAKY_SLOPE = 0.01


def _as_batch(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected a {rank - 1}-D or {rank}-D array, got shape {x.shape}")
    return x, False


def _unbatch(y, squeezed):
    return y[0] if squeezed else y


def conv_output_size(size, k, stride=1, pad=0):
    out = (size + 2 * pad - k) // stride + 1
    if size + 2 * pad - k < 0 or out <= 0:
        raise ShapeError(
            f"convolution of extent {size} with kernel {k}, stride {stride}, "
            f"padding {pad} has no valid output")
    return out


def conv_transpose_output_size(size, k, stride=1, pad=0):
    out = (size - 1) * stride + k - 2 * pad
    if out <= 0:
        raise ShapeError(
            f"transpose convolution of extent {size} with kernel {k}, stride {stride}, "
            f"padding {pad} has non-positive output extent {out}")
    return out


# -- linear ----------------------------------------------------------------

def linear_forward(x, weight, bias):
    """``y = x @ weight.T + bias`` for ``x`` of shape ``[in]`` or ``[N, in]``."""
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear input shape {x.shape} does not match weight shape {weight.shape}")
    return x @ weight.T + bias


def linear_backward(gy, x, weight):
    """Return ``(gx, gweight, gbias)``."""
    gx = gy @ weight
    if gy.ndim == 1:
        return gx, np.outer(gy, x), gy.copy()
    return gx, gy.T @ x, gy.sum(axis=0)


# -- convolution -------------------------------------------------------------

def conv2d_forward(x, weight, bias=None, stride=1, pad=0):
    """Zero-padded cross-correlation of ``x`` with ``weight`` ``[out, in, k, k]``."""
    xb, squeezed = _as_batch(x, 4)
    if xb.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv input shape {np.shape(x)} does not match weight shape {weight.shape}")
    k = weight.shape[2]
    conv_output_size(xb.shape[2], k, stride, pad)
    conv_output_size(xb.shape[3], k, stride, pad)
    y = kernels.conv2d_forward(np.ascontiguousarray(xb), np.ascontiguousarray(weight), stride, pad)
    if bias is not None:
        y += bias[None, :, None, None]
    return _unbatch(y, squeezed)


def conv2d_backward(gy, x, weight, stride=1, pad=0, need_input_grad=True):
    """Return ``(gx, gweight, gbias)``; ``gx`` is None when not requested."""
    gyb, squeezed = _as_batch(gy, 4)
    xb, _ = _as_batch(x, 4)
    gyb = np.ascontiguousarray(gyb)
    k = weight.shape[2]
    gw = kernels.conv2d_backward_weight(np.ascontiguousarray(xb), gyb, k, stride, pad)
    gb = gyb.sum(axis=(0, 2, 3))
    gx = None
    if need_input_grad:
        gx = kernels.conv2d_backward_input(gyb, np.ascontiguousarray(weight),
                                           xb.shape[2:], stride, pad)
        gx = _unbatch(gx, squeezed)
    return gx, gw, gb


def conv_transpose2d_forward(x, weight, bias=None, stride=1, pad=0):
    """Transpose convolution; ``weight`` is ``[in, out, k, k]``.

    Output extent is ``(h - 1) * stride + k - 2 * pad``. The map is the
    adjoint of :func:`conv2d_forward` with the same weight and geometry.
    """
    xb, squeezed = _as_batch(x, 4)
    if xb.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"transpose conv input shape {np.shape(x)} does not match weight shape {weight.shape}")
    k = weight.shape[2]
    out_hw = (conv_transpose_output_size(xb.shape[2], k, stride, pad),
              conv_transpose_output_size(xb.shape[3], k, stride, pad))
    y = kernels.conv2d_backward_input(np.ascontiguousarray(xb), np.ascontiguousarray(weight),
                                      out_hw, stride, pad)
    if bias is not None:
        y += bias[None, :, None, None]
    return _unbatch(y, squeezed)


def conv_transpose2d_backward(gy, x, weight, stride=1, pad=0, need_input_grad=True):
    gyb, squeezed = _as_batch(gy, 4)
    xb, _ = _as_batch(x, 4)
    gyb = np.ascontiguousarray(gyb)
    k = weight.shape[2]
    # the forward map is conv-adjoint, so the roles of input and output swap
    gw = kernels.conv2d_backward_weight(gyb, np.ascontiguousarray(xb), k, stride, pad)
    gb = gyb.sum(axis=(0, 2, 3))
    gx = None
    if need_input_grad:
        gx = _unbatch(kernels.conv2d_forward(gyb, np.ascontiguousarray(weight), stride, pad),
                      squeezed)
    return gx, gw, gb


# -- pooling -----------------------------------------------------------------

def maxpool2d_forward(x, window):
    """Non-overlapping max pool with stride equal to ``window``.

    Returns ``(y, argmax)``; ``argmax`` holds the row-major offset of the
    first maximum inside each window.
    """
    xb, squeezed = _as_batch(x, 4)
    h, w = xb.shape[2:]
    if h % window or w % window:
        raise ShapeError(f"pool window {window} does not divide spatial shape {(h, w)}")
    y, idx = kernels.maxpool_forward(np.ascontiguousarray(xb), window)
    return _unbatch(y, squeezed), _unbatch(idx, squeezed)


def maxpool2d_backward(gy, argmax, window):
    gyb, squeezed = _as_batch(gy, 4)
    idx, _ = _as_batch(argmax, 4)
    if idx.shape != gyb.shape:
        raise ShapeError(f"pool cotangent shape {gyb.shape} does not match argmax shape {idx.shape}")
    gx = kernels.maxpool_backward(np.ascontiguousarray(gyb),
                                  np.ascontiguousarray(idx, dtype=np.int32), window)
    return _unbatch(gx, squeezed)


# -- activations -------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(gy, x):
    return np.where(x > 0, gy, 0).astype(gy.dtype, copy=False)


def leaky_relu(x, slope=DEFAULT_LEAKY_SLOPE):
    return np.where(x > 0, x, x * np.asarray(slope, dtype=x.dtype))


def leaky_relu_backward(gy, x, slope=DEFAULT_LEAKY_SLOPE):
    return np.where(x > 0, gy, gy * np.asarray(slope, dtype=gy.dtype))


def sigmoid(x):
    """Logistic function, clamped so the result stays strictly inside (0, 1)."""
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    x = x.astype(dtype, copy=False)
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + e), e / (1 + e))
    # float32 rounds sigmoid(x > ~17) to exactly 1
    return np.clip(y, np.finfo(dtype).tiny, np.nextafter(dtype.type(1), dtype.type(0)))


def sigmoid_backward(gy, y):
    """Cotangent through sigmoid given its *output* ``y``."""
    return gy * y * (1 - y)


# -- losses ------------------------------------------------------------------

def _check_same(pred, target):
    if np.shape(pred) != np.shape(target):
        raise ShapeError(f"prediction shape {np.shape(pred)} != target shape {np.shape(target)}")


def mse_loss(pred, target):
    _check_same(pred, target)
    d = np.asarray(pred, dtype=np.float64) - target
    return float(np.mean(d * d))


def mse_grad(pred, target):
    _check_same(pred, target)
    return (2.0 / pred.size) * (pred - target)


def mae_loss(pred, target):
    _check_same(pred, target)
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - target)))


def mae_grad(pred, target):
    """Subgradient; zero where prediction equals target."""
    _check_same(pred, target)
    return np.sign(pred - target) / pred.size


LOSSES = {
    "mse": (mse_loss, mse_grad),
    "mae": (mae_loss, mae_grad),
}


# -- layer objects -----------------------------------------------------------

class Layer:
    """A forward/backward pair with cached state and optional parameters."""

    kind = "layer"
    params = ()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def parameters(self):
        return [getattr(self, name) for name in self.params]

    def gradients(self):
        return [getattr(self, "grad_" + name) for name in self.params]

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def clear(self):
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"

    def describe(self):
        return ""


class Linear(Layer):
    kind = "linear"
    params = ("weight", "bias")

    def __init__(self, n_in, n_out, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = np.zeros((n_out, n_in), dtype=dtype)
        self.bias = np.zeros(n_out, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self.need_input_grad = True

    @property
    def fan_in(self):
        return self.n_in

    @property
    def fan_out(self):
        return self.n_out

    def forward(self, x):
        self._cache = x
        return linear_forward(x, self.weight, self.bias)

    def backward(self, gy):
        gx, self.grad_weight, self.grad_bias = linear_backward(gy, self._cache, self.weight)
        return gx

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ShapeError(f"linear expects ({self.n_in},), got {tuple(in_shape)}")
        return (self.n_out,)

    def describe(self):
        return f"{self.n_in}->{self.n_out}"


class Conv2d(Layer):
    kind = "conv"
    params = ("weight", "bias")

    def __init__(self, in_ch, out_ch, k, pad=0, stride=1, dtype=np.float32):
        if k < 1 or pad < 0 or stride < 1:
            raise ShapeError(f"invalid conv geometry k={k} pad={pad} stride={stride}")
        self.in_ch, self.out_ch, self.k, self.pad, self.stride = in_ch, out_ch, k, pad, stride
        self.weight = np.zeros((out_ch, in_ch, k, k), dtype=dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self.need_input_grad = True

    @property
    def fan_in(self):
        return self.in_ch * self.k * self.k

    @property
    def fan_out(self):
        return self.out_ch * self.k * self.k

    def forward(self, x):
        self._cache = x
        return conv2d_forward(x, self.weight, self.bias, self.stride, self.pad)

    def backward(self, gy):
        gx, self.grad_weight, self.grad_bias = conv2d_backward(
            gy, self._cache, self.weight, self.stride, self.pad, self.need_input_grad)
        return gx

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} channels, got {c}")
        return (self.out_ch,
                conv_output_size(h, self.k, self.stride, self.pad),
                conv_output_size(w, self.k, self.stride, self.pad))

    def describe(self):
        return f"{self.in_ch}->{self.out_ch}, k={self.k}, pad={self.pad}, stride={self.stride}"


class ConvTranspose2d(Conv2d):
    """Transpose convolution; ``weight`` is stored ``[in, out, k, k]``."""

    kind = "tconv"

    def __init__(self, in_ch, out_ch, k, pad=0, stride=1, dtype=np.float32):
        super().__init__(in_ch, out_ch, k, pad, stride, dtype)
        self.weight = np.zeros((in_ch, out_ch, k, k), dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)

    @property
    def fan_in(self):
        # input taps reaching one output pixel
        taps = -(-self.k // self.stride)
        return self.in_ch * taps * taps

    @property
    def fan_out(self):
        return self.out_ch * self.k * self.k

    def forward(self, x):
        self._cache = x
        return conv_transpose2d_forward(x, self.weight, self.bias, self.stride, self.pad)

    def backward(self, gy):
        gx, self.grad_weight, self.grad_bias = conv_transpose2d_backward(
            gy, self._cache, self.weight, self.stride, self.pad, self.need_input_grad)
        return gx

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeError(f"transpose conv expects {self.in_ch} channels, got {c}")
        return (self.out_ch,
                conv_transpose_output_size(h, self.k, self.stride, self.pad),
                conv_transpose_output_size(w, self.k, self.stride, self.pad))


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, window):
        self.window = window

    def forward(self, x):
        y, self._cache = maxpool2d_forward(x, self.window)
        return y

    def backward(self, gy):
        return maxpool2d_backward(gy, self._cache, self.window)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h % self.window or w % self.window:
            raise ShapeError(f"pool window {self.window} does not divide {(h, w)}")
        return (c, h // self.window, w // self.window)

    def describe(self):
        return f"{self.window}x{self.window}"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x
        return relu(x)

    def backward(self, gy):
        return relu_backward(gy, self._cache)

    def derivative(self, x):
        return (x > 0).astype(x.dtype)


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=DEFAULT_LEAKY_SLOPE):
        if not slope > 0:
            raise ValueError("LeakyReLU slope must be positive")
        self.slope = float(slope)

    def forward(self, x):
        self._cache = x
        return leaky_relu(x, self.slope)

    def backward(self, gy):
        return leaky_relu_backward(gy, self._cache, self.slope)

    def derivative(self, x):
        return np.where(x > 0, 1, self.slope).astype(x.dtype)

    def describe(self):
        return f"slope={self.slope:g}"


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, gy):
        return sigmoid_backward(gy, self._cache)

    def derivative(self, x):
        y = sigmoid(x)
        return y * (1 - y)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._cache)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Unflatten(Layer):
    kind = "unflatten"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, gy):
        return gy.reshape(gy.shape[0], -1)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot unflatten {tuple(in_shape)} to {self.shape}")
        return self.shape

    def describe(self):
        return "x".join(map(str, self.shape))


ACTIVATIONS = (ReLU, LeakyReLU, Sigmoid)
