"""Permutation-aware attention blocks over sets: MHA, MAB, PMA, ISAB.

MAB(x, y) = h + FF(h) with h = x W_q + MHA(x, y, y); no layer normalization.
PMA pools a set into a fixed number of seed vectors; ISAB routes
self-attention through trainable inducing points for O(n * m_ind) cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import FeedForward, Linear, Module, glorot_uniform
from .tensor import ShapeError, Tensor, concat, matmul, softmax, transpose

__all__ = ["AttnConfig", "MultiHeadAttention", "MAB", "PMA", "ISAB"]


@dataclass
class AttnConfig:
    d: int = 128
    heads: int = 4
    m_inducing: int = 32
    pma_seeds: int = 1

    def validate(self):
        if self.d % self.heads != 0:
            raise ValueError(f"model dim {self.d} not divisible by {self.heads} heads")
        if self.m_inducing < 1 or self.pma_seeds < 1:
            raise ValueError("inducing point and seed counts must be >= 1")
        return self


class MultiHeadAttention(Module):
    """Scaled dot-product attention with h heads, concatenated and mixed."""

    def __init__(self, rng, d_q: int, d_kv: int, d: int, heads: int):
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d // heads
        self.w_q = Linear(rng, d_q, d, bias=False)
        self.w_k = Linear(rng, d_kv, d, bias=False)
        self.w_v = Linear(rng, d_kv, d, bias=False)
        self.w_o = Linear(rng, d, d, bias=False)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if k.shape[0] == 0 or v.shape[0] == 0:
            raise ShapeError("attention over zero keys is undefined")
        if k.shape[0] != v.shape[0]:
            raise ShapeError(f"key/value counts differ: {k.shape[0]} vs {v.shape[0]}")
        qs = self.w_q(q)
        ks = self.w_k(k)
        vs = self.w_v(v)
        scale = Tensor(1.0 / np.sqrt(self.d_head))
        outs = []
        for h in range(self.heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = _cols(qs, lo, hi)
            kh = _cols(ks, lo, hi)
            vh = _cols(vs, lo, hi)
            att = softmax(matmul(qh, transpose(kh)) * scale, axis=1)
            outs.append(matmul(att, vh))
        return self.w_o(concat(outs, axis=1))

    def query_projection(self, x: Tensor) -> Tensor:
        """The concatenated per-head query map [W_q^1 ... W_q^h]."""
        return self.w_q(x)


def _cols(t: Tensor, lo: int, hi: int) -> Tensor:
    from .tensor import slice_axis

    return slice_axis(t, 1, lo, hi)


class MAB(Module):
    """Cross-attention block: queries x attend over set y."""

    def __init__(self, rng, d_x: int, d_y: int, d: int, heads: int):
        super().__init__()
        self.mha = MultiHeadAttention(rng, d_x, d_y, d, heads)
        self.ff = FeedForward(rng, d)

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        h = self.mha.query_projection(x) + self.mha(x, y, y)
        return h + self.ff(h)


class PMA(Module):
    """Pooling by multihead attention onto m trainable seed vectors."""

    def __init__(self, rng, d: int, heads: int, n_seeds: int = 1):
        super().__init__()
        self.seeds = Tensor(
            rng.standard_normal((n_seeds, d)) / np.sqrt(d), requires_grad=True
        )
        self.mab = MAB(rng, d, d, d, heads)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] == 0:
            raise ShapeError("PMA over an empty set")
        return self.mab(self.seeds, x)


class ISAB(Module):
    """Induced self-attention: MAB(x, MAB(s, x)) with trainable inducing points."""

    def __init__(self, rng, d: int, heads: int, m_inducing: int):
        super().__init__()
        self.inducing = Tensor(
            rng.standard_normal((m_inducing, d)) / np.sqrt(d), requires_grad=True
        )
        self.mab_inner = MAB(rng, d, d, d, heads)
        self.mab_outer = MAB(rng, d, d, d, heads)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] == 0:
            raise ShapeError("ISAB over an empty set")
        return self.mab_outer(x, self.mab_inner(self.inducing, x))
