"""First-order adaptive optimizers: Adam, RMSprop, Adagrad and Adadelta.

The ``*_step`` functions are pure: they take ``(param, grad, state)`` and
return a new parameter array and a new state, leaving the inputs untouched.
:class:`Optimizer` applies them in place over a list of parameter arrays.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError

DEFAULTS = {
    "adam": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "rmsprop": {"lr": 1e-3, "rho": 0.9, "eps": 1e-8},
    "adagrad": {"lr": 1e-2, "eps": 1e-10},
    "adadelta": {"lr": 1.0, "rho": 0.9, "eps": 1e-6},
}

_MOMENTS = {
    "adam": ("m", "v"),
    "rmsprop": ("v",),
    "adagrad": ("sum_sq",),
    "adadelta": ("avg_sq_grad", "avg_sq_delta"),
}


@dataclass(frozen=True)
class OptimizerState:
    """Moment tensors, step counter and hyperparameters for one parameter."""

    algorithm: str
    moments: dict
    hyper: dict
    t: int = 0


def init_state(algorithm, param, **hyper):
    if algorithm not in DEFAULTS:
        raise ValueError(f"unknown optimizer {algorithm!r}; choose from {sorted(DEFAULTS)}")
    unknown = set(hyper) - set(DEFAULTS[algorithm])
    if unknown:
        raise ValueError(f"{algorithm} has no hyperparameter(s) {sorted(unknown)}")
    merged = {**DEFAULTS[algorithm], **hyper}
    moments = {name: np.zeros_like(param) for name in _MOMENTS[algorithm]}
    return OptimizerState(algorithm, moments, merged, 0)


def _check(param, grad, state, algorithm):
    if state.algorithm != algorithm:
        raise ValueError(f"state belongs to {state.algorithm}, not {algorithm}")
    if np.shape(param) != np.shape(grad):
        raise ShapeError(f"gradient shape {np.shape(grad)} != parameter shape {np.shape(param)}")
    for name, mom in state.moments.items():
        if mom.shape != np.shape(param):
            raise ShapeError(f"moment {name!r} shape {mom.shape} != parameter shape {np.shape(param)}")


def adam_step(param, grad, state):
    _check(param, grad, state, "adam")
    h = state.hyper
    t = state.t + 1
    m = h["beta1"] * state.moments["m"] + (1 - h["beta1"]) * grad
    v = h["beta2"] * state.moments["v"] + (1 - h["beta2"]) * grad * grad
    m_hat = m / (1 - h["beta1"] ** t)
    v_hat = v / (1 - h["beta2"] ** t)
    new = param - h["lr"] * m_hat / (np.sqrt(v_hat) + h["eps"])
    return new.astype(param.dtype, copy=False), replace(state, moments={"m": m, "v": v}, t=t)


def rmsprop_step(param, grad, state):
    _check(param, grad, state, "rmsprop")
    h = state.hyper
    v = h["rho"] * state.moments["v"] + (1 - h["rho"]) * grad * grad
    new = param - h["lr"] * grad / (np.sqrt(v) + h["eps"])
    return new.astype(param.dtype, copy=False), replace(state, moments={"v": v}, t=state.t + 1)


def adagrad_step(param, grad, state):
    _check(param, grad, state, "adagrad")
    h = state.hyper
    acc = state.moments["sum_sq"] + grad * grad
    new = param - h["lr"] * grad / (np.sqrt(acc) + h["eps"])
    return new.astype(param.dtype, copy=False), replace(state, moments={"sum_sq": acc}, t=state.t + 1)


def adadelta_step(param, grad, state):
    _check(param, grad, state, "adadelta")
    h = state.hyper
    rho, eps = h["rho"], h["eps"]
    avg_g = rho * state.moments["avg_sq_grad"] + (1 - rho) * grad * grad
    delta = -np.sqrt(state.moments["avg_sq_delta"] + eps) / np.sqrt(avg_g + eps) * grad
    avg_d = rho * state.moments["avg_sq_delta"] + (1 - rho) * delta * delta
    new = param + h["lr"] * delta
    moments = {"avg_sq_grad": avg_g, "avg_sq_delta": avg_d}
    return new.astype(param.dtype, copy=False), replace(state, moments=moments, t=state.t + 1)


STEPS = {
    "adam": adam_step,
    "rmsprop": rmsprop_step,
    "adagrad": adagrad_step,
    "adadelta": adadelta_step,
}


@dataclass
class Optimizer:
    """Applies one algorithm to a list of parameter arrays, updating them in place.

    Each parameter keeps its own :class:`OptimizerState`.
    """

    algorithm: str
    params: list
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in STEPS:
            raise ValueError(f"unknown optimizer {self.algorithm!r}; choose from {sorted(STEPS)}")
        self.states = [init_state(self.algorithm, p, **self.hyper) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        fn = STEPS[self.algorithm]
        for i, (p, g) in enumerate(zip(self.params, grads)):
            new, self.states[i] = fn(p, g, self.states[i])
            p[...] = new
