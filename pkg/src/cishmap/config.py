"""Flat ``key = value`` pipeline configuration.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are
rejected. Values are parsed to the type of the key's default.
"""

import hashlib

from .errors import ConfigError

DEFAULTS = {
    "mask.downscale": 8,
    "mask.sigma": 2.0,
    "mask.erosion_radius": 20,
    "mask.dark_tissue": True,
    "mask.scale_um_per_px": 0.5,
    "tile.side": 300,
    "tile.stride": 150,
    "tile.min_tissue_fraction": 0.25,
    "train.epochs": 70,
    "train.batch": 32,
    "train.optimizer": "adam",
    "train.lr": "default",
    "train.loss": "mse",
    "train.seed": 0,
    "train.leaky_slope": 0.01,
    "fcm.c": 7,
    "fcm.m": 1.8,
    "fcm.tol": 1e-5,
    "fcm.max_iter": 300,
    "fcm.seed": 0,
    "render.palette": "default",
    "paths.slide": "",
    "paths.workdir": "run",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw):
    default = DEFAULTS[key]
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key} (expected {type(default).__name__})") from None
    return text


def parse_assignment(line):
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def load(path=None, overrides=()):
    """Defaults, then the file at ``path``, then ``overrides`` (key, value) pairs."""
    cfg = dict(DEFAULTS)
    items = []
    if path:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if line:
                    try:
                        items.append(parse_assignment(line))
                    except ConfigError as exc:
                        raise ConfigError(f"{path}:{n}: {exc}") from None
    items.extend(overrides)
    for key, value in items:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def dumps(cfg):
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in sorted(cfg))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def digest(cfg):
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()
