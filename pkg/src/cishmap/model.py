"""The convolutional autoencoder: architecture, training, persistence.

The default architecture maps a 1x300x300 tile to a 2-float code and back::

    encoder  Conv(1->4)+ReLU+Pool2   Conv(4->8)+ReLU+Pool2
             Conv(8->16)+ReLU+Pool3  Conv(16->32)+ReLU+Pool5
             Flatten  Linear 800->100, 100->25, 25->2 (each + LeakyReLU)
    decoder  Linear 2->25, 25->100, 100->800 (each + LeakyReLU)  Unflatten
             TConv(32->16, k5 s5)+ReLU  TConv(16->8, k3 s3)+ReLU
             TConv(8->4, k2 s2)+ReLU    TConv(4->1, k2 s2)+Sigmoid

Transpose convolutions use kernel == stride == the mirrored pool size, so
the decoder upsamples 5->25->75->150->300 without any pooling.
"""

import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .errors import ModelFormatError, NumericFault, ShapeError
from .optim import DEFAULTS as OPTIMIZER_DEFAULTS
from .optim import Optimizer

logger = logging.getLogger(__name__)

VARIANTS = ("full", "noconv", "shallow")


@dataclass(frozen=True)
class ArchSpec:
    """Geometry of an autoencoder variant.

    ``variant`` is "full" (the 14-block model), "noconv" (conv blocks
    removed, linear layers only) or "shallow" (two conv and two linear
    blocks per side).
    """

    variant: str = "full"
    input_side: int = 300
    channels: tuple = (1, 4, 8, 16, 32)
    kernel: int = 3
    pad: int = 1
    pools: tuple = (2, 2, 3, 5)
    hidden: tuple = (100, 25)
    latent: int = 2
    leaky_slope: float = nn.DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if len(self.channels) != len(self.pools) + 1:
            raise ValueError("need exactly one more channel entry than pool entries")

    @classmethod
    def reduced(cls, side=64, **kw):
        """A cheaper clone with the same code paths, for CI-scale runs."""
        pools = kw.pop("pools", None)
        if pools is None:
            pools = {64: (2, 2, 2, 2), 30: (2, 3, 5, 1), 60: (2, 2, 3, 5)}.get(side)
            if pools is None:
                raise ValueError(f"no default pool plan for side {side}; pass pools=")
        return cls(input_side=side, pools=tuple(pools), **kw)

    @classmethod
    def shallow(cls, side=300, **kw):
        kw.setdefault("channels", (1, 4, 8))
        kw.setdefault("pools", (5, 5))
        kw.setdefault("hidden", (25,))
        return cls(variant="shallow", input_side=side, **kw)

    @property
    def code_side(self):
        side = self.input_side
        for p in self.pools:
            if side % p:
                raise ShapeError(f"pool plan {self.pools} does not divide input side {self.input_side}")
            side //= p
        return side

    @property
    def flat_size(self):
        if self.variant == "noconv":
            return self.channels[0] * self.input_side ** 2
        return self.channels[-1] * self.code_side ** 2


@dataclass
class Block:
    name: str
    layers: list
    counted: bool = True


@dataclass
class TrainConfig:
    epochs: int = 70
    batch_size: int = 32
    optimizer: str = "adam"
    hyper: dict = field(default_factory=dict)
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in nn.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {sorted(nn.LOSSES)}")
        if self.optimizer not in OPTIMIZER_DEFAULTS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _seed_sequence(seed, stream):
    return np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(stream,))


class Autoencoder:
    """Ordered blocks of layers with an encoder half and a decoder half."""

    def __init__(self, arch, blocks, n_encoder_blocks, dtype=np.float32):
        self.arch = arch
        self.blocks = blocks
        self.n_encoder_blocks = n_encoder_blocks
        self.dtype = np.dtype(dtype)
        self.input_shape = (arch.channels[0], arch.input_side, arch.input_side)

    @property
    def encoder(self):
        return self.blocks[:self.n_encoder_blocks]

    @property
    def decoder(self):
        return self.blocks[self.n_encoder_blocks:]

    @property
    def layers(self):
        return [layer for b in self.blocks for layer in b.layers]

    @property
    def counted_blocks(self):
        return [b for b in self.blocks if b.counted]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.gradients()]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def shape_trace(self):
        """List of ``(block name, output shape)`` for one sample."""
        shape = self.input_shape
        trace = []
        for b in self.blocks:
            for layer in b.layers:
                shape = layer.output_shape(shape)
            trace.append((b.name, shape))
        return trace

    def layer_shape_trace(self, part="encoder"):
        """Output shapes of every shape-changing layer in ``part``.

        Activations are skipped since they keep their input's shape.
        """
        blocks = {"encoder": self.encoder, "decoder": self.decoder}[part]
        shape = self.input_shape
        if part == "decoder":
            shape = (self.arch.latent,)
        trace = []
        for b in blocks:
            for layer in b.layers:
                shape = layer.output_shape(shape)
                if not hasattr(layer, "derivative"):
                    trace.append(shape)
        return trace

    def _run(self, blocks, x, check):
        for b in blocks:
            for layer in b.layers:
                x = layer.forward(x)
            if check and not np.all(np.isfinite(x)):
                raise NumericFault(f"non-finite activation in block {b.name!r}")
        return x

    def _batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape == self.input_shape:
            return x[None], True
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects input {self.input_shape}, got {x.shape}")
        return x, False

    def encode(self, x, check=True):
        """Latent codes ``[N, latent]`` for tiles ``[N, C, H, W]`` (or one tile)."""
        xb, single = self._batch(x)
        z = self._run(self.encoder, xb, check)
        return z[0] if single else z

    def decode(self, z, check=True):
        z = np.asarray(z, dtype=self.dtype)
        single = z.ndim == 1
        if z.shape[-1] != self.arch.latent:
            raise ShapeError(f"latent code must have {self.arch.latent} values, got shape {z.shape}")
        y = self._run(self.decoder, z[None] if single else z, check)
        return y[0] if single else y

    def forward(self, x, check=False):
        return self._run(self.blocks, x, check)

    def backward(self, gy):
        for layer in reversed(self.layers):
            if gy is None:
                break
            gy = layer.backward(gy)
        return gy

    def clear(self):
        for layer in self.layers:
            layer.clear()


# -- construction --------------------------------------------------------

def _linear_block(name, n_in, n_out, slope, dtype, act=None):
    act = act if act is not None else nn.LeakyReLU(slope)
    return Block(name, [nn.Linear(n_in, n_out, dtype), act])


def _assemble(arch, dtype):
    dt = np.dtype(dtype)
    enc, dec = [], []
    slope = arch.leaky_slope
    ch, pools = arch.channels, arch.pools
    if arch.variant == "noconv":
        enc.append(Block("flatten", [nn.Flatten()], counted=False))
    else:
        for i, pool in enumerate(pools):
            enc.append(Block(f"conv{i + 1}", [
                nn.Conv2d(ch[i], ch[i + 1], arch.kernel, pad=arch.pad, dtype=dt),
                nn.ReLU(),
                nn.MaxPool2d(pool),
            ]))
        enc.append(Block("flatten", [nn.Flatten()], counted=False))
    widths = [arch.flat_size, *arch.hidden, arch.latent]
    for i in range(len(widths) - 1):
        enc.append(_linear_block(f"enc_linear{i + 1}", widths[i], widths[i + 1], slope, dt))

    back = widths[::-1]
    if arch.variant == "noconv":
        for i in range(len(back) - 2):
            dec.append(_linear_block(f"dec_linear{i + 1}", back[i], back[i + 1], slope, dt))
        dec.append(_linear_block(f"dec_linear{len(back) - 1}", back[-2], back[-1], slope, dt,
                                 act=nn.Sigmoid()))
        dec.append(Block("unflatten", [nn.Unflatten((ch[0], arch.input_side, arch.input_side))],
                         counted=False))
    else:
        for i in range(len(back) - 1):
            dec.append(_linear_block(f"dec_linear{i + 1}", back[i], back[i + 1], slope, dt))
        dec.append(Block("unflatten", [nn.Unflatten((ch[-1], arch.code_side, arch.code_side))],
                         counted=False))
        n = len(pools)
        for j in range(n):
            i = n - 1 - j
            act = nn.Sigmoid() if j == n - 1 else nn.ReLU()
            k = pools[i]
            dec.append(Block(f"tconv{j + 1}", [
                nn.ConvTranspose2d(ch[i + 1], ch[i], k, pad=0, stride=k, dtype=dt),
                act,
            ]))
    return Autoencoder(arch, enc + dec, len(enc), dt)


def _gain(act, slope):
    if isinstance(act, nn.ReLU):
        return np.sqrt(2.0)
    if isinstance(act, nn.LeakyReLU):
        return np.sqrt(2.0 / (1 + slope ** 2))
    return 1.0


def init_parameters(model, seed):
    """Kaiming-uniform for layers feeding (Leaky)ReLU, Xavier-uniform before sigmoid.

    Every parameterized layer draws from its own child of the seed sequence,
    so changing one layer's shape leaves the others' draws unchanged.
    """
    param_layers = []
    for b in model.blocks:
        for i, layer in enumerate(b.layers):
            if layer.params:
                act = b.layers[i + 1] if i + 1 < len(b.layers) else None
                param_layers.append((layer, act))
    children = _seed_sequence(seed, 0).spawn(len(param_layers))
    for (layer, act), child in zip(param_layers, children):
        rng = np.random.default_rng(child)
        if isinstance(act, nn.Sigmoid):
            bound = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        else:
            bound = _gain(act, model.arch.leaky_slope) * np.sqrt(3.0 / layer.fan_in)
        layer.weight[...] = rng.uniform(-bound, bound, size=layer.weight.shape)
        layer.bias[...] = 0
    return model


def build_model(arch=None, seed=0, dtype=np.float32):
    """Assemble and initialize an autoencoder. ``arch`` defaults to the 300px model."""
    arch = arch or ArchSpec()
    model = _assemble(arch, dtype)
    model.shape_trace()  # raises on inconsistent geometry
    first = model.layers[0] if model.layers[0].params else None
    if first is not None:
        first.need_input_grad = False
    return init_parameters(model, seed)


# -- training ------------------------------------------------------------

def train(model, tiles, config=None, callback=None):
    """Minibatch training; returns the per-epoch mean of per-batch losses.

    ``tiles`` is ``[N, C, H, W]``. Batches are drawn from a seeded shuffle
    each epoch and the last short batch is kept. Batch losses are weighted by
    batch size, so the epoch value does not depend on which tiles land in
    the short batch.
    """
    config = config or TrainConfig()
    tiles = np.asarray(tiles, dtype=model.dtype)
    if tiles.ndim != 4 or len(tiles) == 0:
        raise ValueError("training needs a non-empty [N, C, H, W] tile array")
    if tiles.shape[1:] != model.input_shape:
        raise ShapeError(f"model expects tiles {model.input_shape}, got {tiles.shape[1:]}")
    loss_fn, grad_fn = nn.LOSSES[config.loss]
    opt = Optimizer(config.optimizer, model.parameters(), dict(config.hyper))
    rng = np.random.default_rng(_seed_sequence(config.seed, 1))
    history = []
    n = len(tiles)
    weights = [min(config.batch_size, n - s) for s in range(0, n, config.batch_size)]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = tiles[order[start:start + config.batch_size]]
            recon = model.forward(batch)
            loss = loss_fn(recon, batch)
            if not np.isfinite(loss):
                raise NumericFault(f"non-finite loss at epoch {epoch + 1}, batch {bi + 1}")
            model.backward(grad_fn(recon, batch).astype(model.dtype, copy=False))
            opt.step(model.gradients())
            losses.append(loss)
        model.clear()
        history.append(float(np.average(losses, weights=weights)))
        logger.info("epoch %d/%d loss %.6g", epoch + 1, config.epochs, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return history


def encode_tiles(model, tiles, batch_size=32):
    """Latent codes for every tile, computed batch by batch."""
    tiles = np.asarray(tiles)
    out = np.empty((len(tiles), model.arch.latent), dtype=model.dtype)
    for start in range(0, len(tiles), batch_size):
        out[start:start + batch_size] = model.encode(tiles[start:start + batch_size])
    model.clear()
    return out


def dead_unit_report(model, tiles, batch_size=32):
    """Fraction of never-firing units for each activation layer.

    A unit (a channel of a feature map, or a neuron of a linear layer) is
    dead when the activation's derivative is exactly zero at every position
    on every probe tile. LeakyReLU therefore never reports dead units.
    """
    tiles = np.asarray(tiles, dtype=model.dtype)
    if len(tiles) == 0:
        raise ValueError("dead_unit_report needs at least one tile")
    alive = {}
    names = {}
    for start in range(0, len(tiles), batch_size):
        x = tiles[start:start + batch_size]
        for b in model.blocks:
            for i, layer in enumerate(b.layers):
                if isinstance(layer, nn.ACTIVATIONS):
                    d = layer.derivative(x) != 0
                    axes = (0, 2, 3) if d.ndim == 4 else (0,)
                    fired = d.any(axis=axes)
                    key = id(layer)
                    names[key] = f"{b.name}/{layer.kind}"
                    alive[key] = fired if key not in alive else alive[key] | fired
                x = layer.forward(x)
    model.clear()
    return {names[k]: float(1.0 - v.mean()) for k, v in alive.items()}


# -- persistence -----------------------------------------------------------

MAGIC = b"CAE1"
FORMAT_VERSION = 1

_TYPE_IDS = {
    "conv": 1, "tconv": 2, "linear": 3, "maxpool": 4, "relu": 5,
    "leaky_relu": 6, "sigmoid": 7, "flatten": 8, "unflatten": 9,
}
_BLOCK_MARK = 0


def _layer_dims(layer):
    if layer.kind in ("conv", "tconv"):
        return list(layer.weight.shape) + [layer.pad, layer.stride]
    if layer.kind == "linear":
        return list(layer.weight.shape)
    if layer.kind == "maxpool":
        return [layer.window]
    if layer.kind == "leaky_relu":
        # float64 bit pattern as two u32 words, low word first
        return list(struct.unpack("<2I", struct.pack("<d", layer.slope)))
    if layer.kind == "unflatten":
        return list(layer.shape)
    return []


def _table(model):
    """Layer table records ``(type id, dims)``; a type-0 record opens each block."""
    rows = []
    for b in model.blocks:
        name = b.name.encode("ascii")
        rows.append((_BLOCK_MARK, [int(b.counted), len(name)] + list(name)))
        for layer in b.layers:
            rows.append((_TYPE_IDS[layer.kind], _layer_dims(layer)))
    return rows


def header_size(model):
    size = len(MAGIC) + 2 + 12 + 2 + 2
    for _, dims in _table(model):
        size += 2 + 4 * len(dims)
    return size


def save_model(model, path):
    """Write the binary model container.

    Layout, all little-endian: magic ``CAE1``; u16 format version; u32x3
    input shape; u16 latent size; u16 record count; records of (u8 type id,
    u8 dim count, u32 dims); then every parameter tensor (weight, bias, in
    table order) as float32.
    """
    rows = _table(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<3I", *model.input_shape))
        fh.write(struct.pack("<H", model.arch.latent))
        fh.write(struct.pack("<H", len(rows)))
        for tid, dims in rows:
            fh.write(struct.pack("<BB", tid, len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError("model file is truncated")
    return data


def _layer_from_record(tid, dims):
    kind = {v: k for k, v in _TYPE_IDS.items()}.get(tid)
    if kind is None:
        raise ModelFormatError(f"unknown layer type id {tid}")
    try:
        if kind == "conv":
            o, i, k, _, pad, stride = dims
            return nn.Conv2d(i, o, k, pad=pad, stride=stride)
        if kind == "tconv":
            i, o, k, _, pad, stride = dims
            return nn.ConvTranspose2d(i, o, k, pad=pad, stride=stride)
        if kind == "linear":
            o, i = dims
            return nn.Linear(i, o)
        if kind == "maxpool":
            (w,) = dims
            return nn.MaxPool2d(w)
        if kind == "leaky_relu":
            return nn.LeakyReLU(struct.unpack("<d", struct.pack("<2I", *dims))[0])
        if kind == "unflatten":
            return nn.Unflatten(dims)
        return {"relu": nn.ReLU, "sigmoid": nn.Sigmoid, "flatten": nn.Flatten}[kind]()
    except (ValueError, ShapeError) as exc:
        raise ModelFormatError(f"bad {kind} record {dims}: {exc}") from exc


def _infer_arch(blocks, input_shape, latent):
    convs = [l for b in blocks for l in b.layers if l.kind == "conv"]
    pools = [l.window for b in blocks for l in b.layers if l.kind == "maxpool"]
    linears = [l for b in blocks for l in b.layers if l.kind == "linear"]
    leaky = [l.slope for b in blocks for l in b.layers if l.kind == "leaky_relu"]
    n_enc_lin = len(linears) // 2
    hidden = tuple(l.n_out for l in linears[:n_enc_lin - 1])
    kw = {
        "input_side": input_shape[1],
        "latent": latent,
        "hidden": hidden,
        "leaky_slope": leaky[0] if leaky else nn.DEFAULT_LEAKY_SLOPE,
        "pools": tuple(pools),
    }
    if convs:
        kw["channels"] = (convs[0].in_ch,) + tuple(c.out_ch for c in convs)
        kw["kernel"] = convs[0].k
        kw["pad"] = convs[0].pad
        variant = "full" if len(convs) == 4 else "shallow"
    else:
        kw["channels"] = (input_shape[0],)
        variant = "noconv"
    return ArchSpec(variant=variant, **kw)


def load_model(path):
    """Read a model written by :func:`save_model`; nothing is returned on error."""
    with open(path, "rb") as fh:
        if _read(fh, 4) != MAGIC:
            raise ModelFormatError("not a model file (bad magic bytes)")
        (version,) = struct.unpack("<H", _read(fh, 2))
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        input_shape = struct.unpack("<3I", _read(fh, 12))
        (latent,) = struct.unpack("<H", _read(fh, 2))
        (n_rows,) = struct.unpack("<H", _read(fh, 2))
        blocks = []
        for _ in range(n_rows):
            tid, nd = struct.unpack("<BB", _read(fh, 2))
            dims = list(struct.unpack(f"<{nd}I", _read(fh, 4 * nd)))
            if tid == _BLOCK_MARK:
                if len(dims) < 2 or len(dims) != 2 + dims[1]:
                    raise ModelFormatError("corrupt block record")
                blocks.append(Block(bytes(dims[2:]).decode("ascii"), [], bool(dims[0])))
            else:
                if not blocks:
                    raise ModelFormatError("layer record before any block record")
                blocks[-1].layers.append(_layer_from_record(tid, dims))
        n_enc = next((i + 1 for i, b in enumerate(blocks)
                      if b.layers and b.layers[0].kind == "linear"
                      and b.layers[0].n_out == latent), None)
        if n_enc is None:
            raise ModelFormatError(f"no encoder block produces the {latent}-value code")
        try:
            arch = _infer_arch(blocks, input_shape, latent)
        except ValueError as exc:
            raise ModelFormatError(f"inconsistent layer table: {exc}") from exc
        model = Autoencoder(arch, blocks, n_enc, np.float32)
        model.input_shape = tuple(input_shape)
        try:
            trace = model.shape_trace()
        except ShapeError as exc:
            raise ModelFormatError(f"inconsistent layer table: {exc}") from exc
        if trace[-1][1] != model.input_shape:
            raise ModelFormatError("decoder output shape does not match the input shape")
        for p in model.parameters():
            p[...] = np.frombuffer(_read(fh, 4 * p.size), dtype="<f4").reshape(p.shape)
        if fh.read(1):
            raise ModelFormatError("trailing bytes after parameter data")
    if model.layers and model.layers[0].params:
        model.layers[0].need_input_grad = False
    return model


# -- description -----------------------------------------------------------

def describe_model(model):
    """DOT digraph of the blocks with their output shapes."""
    lines = ["digraph autoencoder {", "  rankdir=TB;", "  node [shape=box];",
             f'  label="input {_fmt_shape(model.input_shape)}";']
    prev = None
    for name, shape in model.shape_trace():
        block = next(b for b in model.blocks if b.name == name)
        parts = [f"{l.kind}({l.describe()})" if l.describe() else l.kind for l in block.layers]
        style = "" if block.counted else ", style=dashed"
        label = "\\n".join([name] + parts + [_fmt_shape(shape)])
        lines.append(f'  {name} [label="{label}"{style}];')
        if prev is not None:
            lines.append(f"  {prev} -> {name};")
        prev = name
    lines.append("}")
    return "\n".join(lines) + "\n"


def _fmt_shape(shape):
    return "(" + ", ".join(str(s) for s in shape) + ")"


def arch_to_dict(arch):
    return asdict(arch)


def with_slope(arch, slope):
    return replace(arch, leaky_slope=slope)
