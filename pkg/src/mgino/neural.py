"""Pointwise networks and the optimisation machinery (Adam, plateau schedule)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = ("gelu", "sin", "identity")


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return ad.gelu(x)
    if kind == "sin":
        return ad.sin(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}; smooth choices are {ACTIVATIONS}")


class Module:
    """Minimal parameter container.

    Parameters are attributes holding ``Tensor(requires_grad=True)``; child
    modules and lists of modules are walked in attribute order so that
    ``named_parameters`` is deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_(self) -> None:
        for p in self.parameters():
            p.data = np.zeros_like(p.data)


def _param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """``y = x W + b`` applied over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 bias: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.constant(x)
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        if x.ndim == 2:
            y = ad.matmul(x, self.weight)
        else:
            lead = x.shape[:-1]
            y = ad.reshape(ad.matmul(ad.reshape(x, (-1, self.d_in)), self.weight),
                           lead + (self.d_out,))
        if self.bias is not None:
            y = y + self.bias
        return y


class Mlp(Module):
    """Pointwise multilayer perceptron with a smooth activation between layers."""

    def __init__(self, d_in: int, hidden: Sequence[int], d_out: int,
                 activation: str = "gelu", rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = [d_in, *hidden, d_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.activation = activation
        self.d_in = d_in
        self.d_out = d_out

    @property
    def widths(self) -> list[int]:
        return [self.d_in] + [layer.d_out for layer in self.layers]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)


def mlp_forward(net: Mlp, x) -> Tensor:
    x = ad.constant(x)
    if x.shape[-1] != net.d_in:
        raise ValueError(f"Mlp expects last dim {net.d_in}, got shape {x.shape}")
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h = layer(h)
        if i < last:
            h = activate(h, net.activation)
    return h


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    if len(params) != len(grads):
        raise ValueError("adam_step: params and grads differ in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteError(f"non-finite gradient for parameter {i}")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new = p.data - state.lr * update
        if state.weight_decay:
            new = new - state.lr * state.weight_decay * p.data
        p.data = new


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` stale epochs.

    An epoch improves when ``loss < best * (1 - threshold)``.
    """

    lr: float
    factor: float = 0.9
    patience: int = 50
    threshold: float = 1e-4
    min_lr: float = 0.0
    best: float = math.inf
    wait: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")


def scheduler_step(s: PlateauScheduler, epoch_loss: float) -> float:
    if not math.isfinite(epoch_loss):
        raise ad.NonFiniteError("scheduler received a non-finite loss")
    if epoch_loss < s.best * (1.0 - s.threshold):
        s.best = float(epoch_loss)
        s.wait = 0
    else:
        s.wait += 1
        if s.wait > s.patience:
            s.lr = max(s.lr * s.factor, s.min_lr)
            s.wait = 0
    return s.lr
