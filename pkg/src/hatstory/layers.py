"""Recurrent and feed-forward building blocks: GRU cell, bidirectional GRU,
small MLPs, and an embedding table. All state starts at zero and every
parameter is a plain Tensor, so the gradient tape sees everything."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import (
    Tensor,
    concat,
    matmul,
    mul,
    row,
    seeded_init,
    sigmoid,
    tanh,
    tile_rows,
    vecmat,
    zeros,
)


@dataclass
class GruParams:
    """Gated recurrent unit weights.

    w_* map the input (d_in, d_h), u_* map the hidden state (d_h, d_h),
    b_* are biases (d_h,).
    """

    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        d_in, d_h = self.w_z.shape
        for name, t in self.named():
            want = (d_in, d_h) if name.startswith("w") else (
                (d_h, d_h) if name.startswith("u") else (d_h,)
            )
            if t.shape != want:
                raise DimensionError(f"GruParams: {name} has shape {t.shape}, want {want}")

    @property
    def d_in(self):
        return self.w_z.shape[0]

    @property
    def d_h(self):
        return self.w_z.shape[1]

    def named(self):
        return [
            ("w_z", self.w_z), ("w_r", self.w_r), ("w_h", self.w_h),
            ("u_z", self.u_z), ("u_r", self.u_r), ("u_h", self.u_h),
            ("b_z", self.b_z), ("b_r", self.b_r), ("b_h", self.b_h),
        ]

    @classmethod
    def create(cls, rng, d_in, d_h):
        """Xavier weights, zero biases."""
        w = lambda shape: seeded_init(rng, shape, "xavier")
        return cls(
            w_z=w((d_in, d_h)), w_r=w((d_in, d_h)), w_h=w((d_in, d_h)),
            u_z=w((d_h, d_h)), u_r=w((d_h, d_h)), u_h=w((d_h, d_h)),
            b_z=zeros(d_h, requires_grad=True),
            b_r=zeros(d_h, requires_grad=True),
            b_h=zeros(d_h, requires_grad=True),
        )


def gru_step(params, x, h):
    """One GRU update.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    cand = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * cand
    """
    z = sigmoid(vecmat(x, params.w_z) + vecmat(h, params.u_z) + params.b_z)
    r = sigmoid(vecmat(x, params.w_r) + vecmat(h, params.u_r) + params.b_r)
    cand = tanh(vecmat(x, params.w_h) + vecmat(mul(r, h), params.u_h) + params.b_h)
    return (1.0 - z) * h + z * cand


def bi_gru(fwd, bwd, xs):
    """Run a forward and a backward GRU over a sequence of vectors.

    Both directions start from zero state; output i is the concatenation of
    the forward state after step i and the backward state after step i
    (counting from the other end), width fwd.d_h + bwd.d_h.
    """
    xs = list(xs)
    if not xs:
        raise ContractError("bi_gru: empty sequence")
    if fwd.d_in != bwd.d_in:
        raise DimensionError(
            f"bi_gru: directions disagree on input width ({fwd.d_in} vs {bwd.d_in})"
        )
    n = len(xs)
    forward = []
    h = zeros(fwd.d_h)
    for x in xs:
        h = gru_step(fwd, x, h)
        forward.append(h)
    backward_states = [None] * n
    h = zeros(bwd.d_h)
    for i in range(n - 1, -1, -1):
        h = gru_step(bwd, xs[i], h)
        backward_states[i] = h
    return [concat([f, b]) for f, b in zip(forward, backward_states)]


@dataclass
class MlpParams:
    """Affine stack: tanh on every hidden layer, linear output."""

    layers: list  # [(w, b), ...] with w (d_in, d_out) and b (d_out,)

    def __post_init__(self):
        if not self.layers:
            raise ContractError("MlpParams: needs at least one layer")
        for w, b in self.layers:
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise DimensionError(
                    f"MlpParams: layer shapes {w.shape} / {b.shape} inconsistent"
                )

    def named(self):
        out = []
        for i, (w, b) in enumerate(self.layers):
            out.append((f"{i}.w", w))
            out.append((f"{i}.b", b))
        return out

    @property
    def d_in(self):
        return self.layers[0][0].shape[0]

    @classmethod
    def create(cls, rng, sizes):
        """sizes = [d_in, hidden..., d_out]; xavier weights, zero biases."""
        if len(sizes) < 2:
            raise ContractError("MlpParams.create: needs input and output sizes")
        layers = []
        for a, b in zip(sizes, sizes[1:]):
            layers.append(
                (seeded_init(rng, (a, b), "xavier"), zeros(b, requires_grad=True))
            )
        return cls(layers)


def mlp(params, x):
    """Apply the stack to a vector (d_in,) -> (d_out,) or row-wise to a
    matrix (n, d_in) -> (n, d_out)."""
    if x.ndim == 1:
        if x.shape[0] != params.d_in:
            raise DimensionError(f"mlp: input width {x.shape[0]}, want {params.d_in}")
        for i, (w, b) in enumerate(params.layers):
            x = vecmat(x, w) + b
            if i < len(params.layers) - 1:
                x = tanh(x)
        return x
    if x.ndim == 2:
        if x.shape[1] != params.d_in:
            raise DimensionError(f"mlp: input width {x.shape[1]}, want {params.d_in}")
        n = x.shape[0]
        for i, (w, b) in enumerate(params.layers):
            x = matmul(x, w) + tile_rows(b, n)
            if i < len(params.layers) - 1:
                x = tanh(x)
        return x
    raise DimensionError(f"mlp: input must be 1-D or 2-D, got shape {x.shape}")


@dataclass
class EmbeddingTable:
    """Token-id to vector lookup; gradients scatter into the looked-up rows."""

    table: Tensor  # (vocab, d_w)

    def __post_init__(self):
        if self.table.ndim != 2:
            raise DimensionError(f"EmbeddingTable: table must be 2-D, got {self.table.shape}")

    @property
    def vocab_size(self):
        return self.table.shape[0]

    @property
    def width(self):
        return self.table.shape[1]

    @classmethod
    def create(cls, rng, vocab_size, width):
        return cls(seeded_init(rng, (vocab_size, width), "xavier"))


def embed(table, token_id):
    if not isinstance(token_id, (int, np.integer)) or not 0 <= token_id < table.vocab_size:
        raise IndexError(
            f"embed: token id {token_id} out of range for vocab {table.vocab_size}"
        )
    return row(table.table, int(token_id))
