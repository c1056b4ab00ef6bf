"""Small neural building blocks on top of the autograd engine.

Layers hold their parameters as ``autograd.Tensor`` leaves and expose them
through ``named_params`` so models can assemble flat, dot-separated
parameter dictionaries for checkpointing.  The LSTM is deliberately composed
from primitive ops (concat / matmul / slice / sigmoid / tanh / mul) rather
than fused: a simpler backward at a small speed cost.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


class Conv:
    def __init__(self, rng, cin: int, cout: int, kernel=(3, 3), stride=(1, 1), padding=(1, 1)):
        kh, kw = kernel
        std = math.sqrt(2.0 / (cin * kh * kw))
        self.w = ag.Tensor(rng.normal(0.0, std, (cout, cin, kh, kw)), requires_grad=True)
        self.b = ag.Tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.conv2d(x, self.w, self.b, self.stride, self.padding)

    def named_params(self) -> dict:
        return {"w": self.w, "b": self.b}


class Linear:
    def __init__(self, rng, din: int, dout: int, zero_init: bool = False):
        if zero_init:
            w = np.zeros((din, dout))
        else:
            w = rng.normal(0.0, math.sqrt(1.0 / din), (din, dout))
        self.w = ag.Tensor(w, requires_grad=True)
        self.b = ag.Tensor(np.zeros(dout), requires_grad=True)

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.bias_add(ag.matmul(x, self.w), self.b)

    def named_params(self) -> dict:
        return {"w": self.w, "b": self.b}


class ResidualBlock:
    """Two 3x3 stride-1 convs with an identity skip; channel count preserved."""

    def __init__(self, rng, channels: int):
        self.c1 = Conv(rng, channels, channels)
        self.c2 = Conv(rng, channels, channels)

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        return ag.relu(ag.add(self.c2(ag.relu(self.c1(x))), x))

    def named_params(self) -> dict:
        return {**prefixed("c1", self.c1.named_params()),
                **prefixed("c2", self.c2.named_params())}


class LSTMCell:
    """One recurrent cell; gate order i, f, g, o. Forget bias starts at 1."""

    def __init__(self, rng, input_size: int, hidden: int):
        self.hidden = hidden
        std = math.sqrt(1.0 / (input_size + hidden))
        self.w = ag.Tensor(rng.normal(0.0, std, (input_size + hidden, 4 * hidden)),
                           requires_grad=True)
        b = np.zeros((1, 4 * hidden))
        b[0, hidden:2 * hidden] = 1.0
        self.b = ag.Tensor(b, requires_grad=True)

    def initial(self) -> tuple[ag.Tensor, ag.Tensor]:
        z = np.zeros((1, self.hidden))
        return ag.Tensor(z.copy()), ag.Tensor(z.copy())

    def step(self, x: ag.Tensor, h: ag.Tensor, c: ag.Tensor) -> tuple[ag.Tensor, ag.Tensor]:
        z = ag.concat([x, h], axis=1)
        gates = ag.matmul(z, self.w) + self.b
        hs = self.hidden
        i = ag.sigmoid(ag.slice_axis(gates, 1, 0, hs))
        f = ag.sigmoid(ag.slice_axis(gates, 1, hs, 2 * hs))
        g = ag.tanh(ag.slice_axis(gates, 1, 2 * hs, 3 * hs))
        o = ag.sigmoid(ag.slice_axis(gates, 1, 3 * hs, 4 * hs))
        c_next = ag.add(ag.mul(f, c), ag.mul(i, g))
        h_next = ag.mul(o, ag.tanh(c_next))
        return h_next, c_next

    def named_params(self) -> dict:
        return {"w": self.w, "b": self.b}


def run_lstm(cell: LSTMCell, inputs: list[ag.Tensor], reverse: bool = False) -> list[ag.Tensor]:
    """Unroll a cell over a list of (1, I) inputs; returns per-step hidden states."""
    h, c = cell.initial()
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    out: list[ag.Tensor] = [None] * len(inputs)  # type: ignore[list-item]
    for t in order:
        h, c = cell.step(inputs[t], h, c)
        out[t] = h
    return out


def cross_entropy_rows(logits: ag.Tensor, targets) -> ag.Tensor:
    """Mean softmax cross-entropy over rows of (N, C) logits."""
    n = logits.data.shape[0]
    logp = ag.log_softmax(logits)
    picked = ag.pick_per_row(logp, targets)
    return ag.scale(ag.tsum(picked), -1.0 / n)
