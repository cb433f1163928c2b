"""Parameterised layers on top of :mod:`svglp.tensor`.

Initialisation: weights ~ Uniform(-a, a) with ``a = sqrt(1 / fan_in)``,
biases zero, LSTM forget-gate biases 1.0.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamSet:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, items=()):
        self._items: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> None:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._items[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def count(self) -> int:
        return sum(t.data.size for t in self)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._items.items()}

    def load(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._items) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, t in self._items.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)


class Module:
    """Collects parameters from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def params(self) -> ParamSet:
        return ParamSet(self.named_parameters())


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    a = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = uniform_param(rng, (n_out, n_in), n_in)
        self.bias = zeros_param((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        n_in = self.weight.shape[1]
        if x.data.ndim != 2 or x.shape[1] != n_in:
            raise ValueError(f"linear: expected input [B, {n_in}], got {x.shape}")
        return T.matmul(x, self.weight.T) + self.bias


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        fan_in = c_in * k * k
        self.weight = uniform_param(rng, (c_out, c_in, k, k), fan_in)
        self.bias = zeros_param((c_out, 1, 1))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.stride, self.padding) + self.bias


@dataclass
class RecurrentState:
    """Hidden and cell states, one pair per stacked layer."""
    h: list[Tensor]
    c: list[Tensor]


class LSTMCell(Module):
    """Gate blocks are stacked in the order input, forget, cell, output."""

    def __init__(self, n_in: int, cells: int, rng: np.random.Generator):
        self.w_ih = uniform_param(rng, (4 * cells, n_in), n_in)
        self.w_hh = uniform_param(rng, (4 * cells, cells), cells)
        bias = np.zeros(4 * cells)
        bias[cells:2 * cells] = 1.0
        self.bias = Tensor(bias, requires_grad=True)
        self.cells = cells

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.cells
        if x.data.ndim != 2 or x.shape[1] != self.w_ih.shape[1]:
            raise ValueError(f"lstm: expected input [B, {self.w_ih.shape[1]}], got {x.shape}")
        if h.shape != (x.shape[0], n) or c.shape != (x.shape[0], n):
            raise ValueError(f"lstm: state shapes {h.shape}, {c.shape} do not match [{x.shape[0]}, {n}]")
        gates = T.matmul(x, self.w_ih.T) + T.matmul(h, self.w_hh.T) + self.bias
        i = T.sigmoid(gates[:, :n])
        f = T.sigmoid(gates[:, n:2 * n])
        g = T.tanh(gates[:, 2 * n:3 * n])
        o = T.sigmoid(gates[:, 3 * n:])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new


def lstm_step(cell: LSTMCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    return cell(x, h, c)


class LSTMStack(Module):
    """Affine embedding, ``layers`` stacked LSTM cells, affine read-out.

    Layer k consumes the hidden output of layer k-1.  The embedding has no
    nonlinearity.
    """

    def __init__(self, n_in: int, n_out: int, cells: int, layers: int, rng: np.random.Generator):
        self.embed = Linear(n_in, cells, rng)
        self.cells = [LSTMCell(cells, cells, rng) for _ in range(layers)]
        self.out = Linear(cells, n_out, rng)
        self.width = cells

    def init_state(self, batch: int) -> RecurrentState:
        z = np.zeros((batch, self.width))
        return RecurrentState([Tensor(z) for _ in self.cells], [Tensor(z) for _ in self.cells])

    def core(self, x: Tensor, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        inp = self.embed(x)
        hs, cs = [], []
        for cell, h, c in zip(self.cells, state.h, state.c):
            h, c = cell(inp, h, c)
            hs.append(h)
            cs.append(c)
            inp = h
        return inp, RecurrentState(hs, cs)

    def __call__(self, x: Tensor, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        top, state = self.core(x, state)
        return self.out(top), state


class GaussianLSTM(LSTMStack):
    """LSTM stack with mean and half-log-variance heads."""

    def __init__(self, n_in: int, n_z: int, cells: int, layers: int, rng: np.random.Generator):
        super().__init__(n_in, n_z, cells, layers, rng)
        self.logvar = Linear(cells, n_z, rng)

    def __call__(self, x: Tensor, state: RecurrentState):
        top, state = self.core(x, state)
        mu = self.out(top)
        sigma = T.exp(T.mul(self.logvar(top), 0.5))
        return mu, sigma, state
