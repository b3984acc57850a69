"""Layers for the fusion transformer, built on the autodiff core.

Everything is float64 and seeded: construction takes a Generator and
draws weights in a fixed order, so a config + seed pins every
parameter bit.  The strided conv block realizes kernel 2 / stride 2 /
no padding as space-to-depth followed by a linear map, which keeps the
backbone inside the existing autodiff ops.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, bilinear_sample, concat, masked_softmax


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def gelu(x: Tensor) -> Tensor:
    # tanh form: smooth everywhere, so finite differences stay clean
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())


class Linear:
    def __init__(self, rng, d_in: int, d_out: int):
        self.w = Tensor(he_uniform(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class MLP:
    """input layer, hidden layers, output layer; gelu between."""

    def __init__(self, rng, dims):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x

    def params(self, prefix: str):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.params(f"{prefix}.l{i}"))
        return out


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.gamma + self.beta

    def params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class MultiHeadAttention:
    """Standard scaled dot-product attention with an optional key mask.

    key_mask: bool [B, M], True = attend.  Padded keys get exactly
    zero weight; a query row whose keys are all masked comes out zero.
    """

    def __init__(self, rng, d_model: int, n_heads: int):
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.h = n_heads
        self.dh = d_model // n_heads
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def __call__(self, q_in, k_in, v_in, key_mask=None) -> Tensor:
        b, n, d = q_in.shape
        m = k_in.shape[1]
        q = self.wq(q_in).reshape(b, n, self.h, self.dh).transpose(0, 2, 1, 3)
        k = self.wk(k_in).reshape(b, m, self.h, self.dh).transpose(0, 2, 1, 3)
        v = self.wv(v_in).reshape(b, m, self.h, self.dh).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dh))
        if key_mask is None:
            mask = np.ones((b, 1, 1, m), dtype=bool)
        else:
            mask = np.asarray(key_mask, dtype=bool).reshape(b, 1, 1, m)
        attn = masked_softmax(scores, mask, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.wo(out)

    def params(self, prefix: str):
        out = []
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.extend(lin.params(f"{prefix}.{name}"))
        return out


class FeedForward:
    def __init__(self, rng, d_model: int, ffn_dim: int):
        self.lin1 = Linear(rng, d_model, ffn_dim)
        self.lin2 = Linear(rng, ffn_dim, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(gelu(self.lin1(x)))

    def params(self, prefix: str):
        return self.lin1.params(f"{prefix}.lin1") + self.lin2.params(f"{prefix}.lin2")


class StridedConvBlock:
    """2x2 kernel, stride 2, no padding: space-to-depth then linear."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.lin = Linear(rng, 4 * c_in, c_out)

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        x = x[:, : 2 * h2, : 2 * w2, :]  # odd edge rows/cols fall outside the last window
        x = x.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h2, w2, 4 * c)
        return gelu(self.lin(x))

    def params(self, prefix: str):
        return self.lin.params(f"{prefix}.lin")


class Backbone:
    """Three strided blocks: spatial /8 (floor at each halving)."""

    def __init__(self, rng, c_in: int, channels, d_model: int):
        dims = [c_in, *channels, d_model]
        self.blocks = [StridedConvBlock(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x

    @staticmethod
    def output_hw(h: int, w: int):
        for _ in range(3):
            h, w = h // 2, w // 2
        return h, w

    def params(self, prefix: str):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend(blk.params(f"{prefix}.block{i}"))
        return out


def sinusoidal_pos_enc_2d(h: int, w: int, d_model: int) -> np.ndarray:
    """Fixed 2-D position code, [h*w, d_model]; row half + column half."""
    if d_model % 4 != 0:
        raise ValueError("d_model must be a multiple of 4 for the 2-D position code")
    d = d_model // 2

    def enc_1d(n, dim):
        pos = np.arange(n, dtype=np.float64)[:, None]
        freqs = np.exp(-math.log(10000.0) * np.arange(dim // 2, dtype=np.float64) / (dim // 2))
        ang = pos * freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    grid = np.zeros((h, w, d_model))
    grid[..., :d] = enc_1d(h, d)[:, None, :]
    grid[..., d:] = enc_1d(w, d)[None, :, :]
    return grid.reshape(h * w, d_model)


class EncoderLayer:
    def __init__(self, rng, d_model: int, n_heads: int, ffn_dim: int):
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.ffn = FeedForward(rng, d_model, ffn_dim)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)

    def __call__(self, x: Tensor, pos: Tensor) -> Tensor:
        qk = x + pos  # position code on queries/keys only, DETR-style
        x = self.ln1(x + self.attn(qk, qk, x))
        return self.ln2(x + self.ffn(x))

    def params(self, prefix: str):
        return (self.attn.params(f"{prefix}.attn") + self.ffn.params(f"{prefix}.ffn")
                + self.ln1.params(f"{prefix}.ln1") + self.ln2.params(f"{prefix}.ln2"))


class DeformableCrossAttention:
    """Attention over K sampled grid points per head instead of all of HW.

    Each query predicts K offsets and K weights per head around its
    reference point p in [0,1]^2; values are bilinearly sampled from
    the (value-projected) memory grid with zero padding outside.
    Offset weights start near zero so early sampling stays at p.
    """

    def __init__(self, rng, d_model: int, n_heads: int, k_points: int):
        self.h = n_heads
        self.dh = d_model // n_heads
        self.k = k_points
        self.value_lin = Linear(rng, d_model, d_model)
        self.offset_lin = Linear(rng, d_model, n_heads * k_points * 2)
        self.offset_lin.w.data *= 0.01
        self.weight_lin = Linear(rng, d_model, n_heads * k_points)
        self.out_lin = Linear(rng, d_model, d_model)

    def __call__(self, queries: Tensor, memory: Tensor, ref: Tensor, grid_hw) -> Tensor:
        b, n, d = queries.shape
        gh, gw = grid_hw
        vals = self.value_lin(memory).reshape(b, gh, gw, d)
        offsets = self.offset_lin(queries).reshape(b, n, self.h, self.k, 2)
        logits = self.weight_lin(queries).reshape(b, n, self.h, self.k)
        weights = masked_softmax(logits, np.ones(logits.shape, dtype=bool), axis=-1)
        points = ref.reshape(b, n, 1, 1, 2) + offsets
        head_outs = []
        for i in range(self.h):
            grid_i = vals[:, :, :, i * self.dh:(i + 1) * self.dh]
            pts_i = points[:, :, i, :, :].reshape(b, n * self.k, 2)
            sampled = bilinear_sample(grid_i, pts_i).reshape(b, n, self.k, self.dh)
            w_i = weights[:, :, i, :].reshape(b, n, self.k, 1)
            head_outs.append((sampled * w_i).sum(axis=2))
        return self.out_lin(concat(head_outs, axis=-1))

    def params(self, prefix: str):
        out = []
        for name, lin in (("value", self.value_lin), ("offset", self.offset_lin),
                          ("weight", self.weight_lin), ("out", self.out_lin)):
            out.extend(lin.params(f"{prefix}.{name}"))
        return out


class DecoderLayer:
    """Masked self-attention, cross-attention to memory, FFN.

    No positional encoding touches the query sequence: the stack stays
    permutation-equivariant over queries.
    """

    def __init__(self, rng, d_model: int, n_heads: int, ffn_dim: int, cross):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.cross = cross
        self.ffn = FeedForward(rng, d_model, ffn_dim)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ln3 = LayerNorm(d_model)

    def __call__(self, tgt: Tensor, memory: Tensor, qmask, ref, grid_hw) -> Tensor:
        t = self.ln1(tgt + self.self_attn(tgt, tgt, tgt, key_mask=qmask))
        if isinstance(self.cross, DeformableCrossAttention):
            t = self.ln2(t + self.cross(t, memory, ref, grid_hw))
        else:
            t = self.ln2(t + self.cross(t, memory, memory))
        return self.ln3(t + self.ffn(t))

    def params(self, prefix: str):
        return (self.self_attn.params(f"{prefix}.self_attn")
                + self.cross.params(f"{prefix}.cross")
                + self.ffn.params(f"{prefix}.ffn")
                + self.ln1.params(f"{prefix}.ln1")
                + self.ln2.params(f"{prefix}.ln2")
                + self.ln3.params(f"{prefix}.ln3"))
