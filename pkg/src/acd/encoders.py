"""Node-embedding backbones: GraphSAGE (isotropic) and GatedGCN (anisotropic).

Both map (adjacency, N x m node features) to N x d_h embeddings through a
linear input lift and L message-passing layers. Batch-norm statistics are
computed per graph (graphs are processed one at a time), with running
buffers for eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import LabeledGraph
from .nn import BatchNorm, Linear, Module
from .tensor import (
    ScatterPlan,
    ShapeError,
    Tensor,
    add,
    gather_rows_planned,
    matmul,
    mul,
    relu,
    scatter_sum,
    sigmoid,
)

__all__ = ["GcnConfig", "InputEmbed", "GraphSAGE", "GatedGCN", "build_encoder"]

GATE_EPS = 1e-6


@dataclass
class GcnConfig:
    variant: str = "gatedgcn"
    layers: int = 4
    hidden_dim: int = 128
    input_dim: int = 20

    def validate(self):
        if self.variant not in ("graphsage", "gatedgcn"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("layers and dims must be positive")
        return self


class InputEmbed(Module):
    """Affine lift of raw node features to the hidden width, shared per node."""

    def __init__(self, rng, d_in: int, d_out: int):
        super().__init__()
        self.d_in = d_in
        self.lift = Linear(rng, d_in, d_out)

    def __call__(self, feats: Tensor) -> Tensor:
        if feats.shape[1] != self.d_in:
            raise ShapeError(
                f"feature width {feats.shape[1]} != configured input dim {self.d_in}"
            )
        return self.lift(feats)


class _SageLayer(Module):
    def __init__(self, rng, d: int):
        super().__init__()
        self.u = Linear(rng, d, d, bias=False)
        self.v = Linear(rng, d, d, bias=False)
        self.bn = BatchNorm(d)

    def __call__(self, mean_adj: Tensor, h: Tensor) -> Tensor:
        agg = matmul(mean_adj, h)
        return relu(self.bn(self.u(h) + self.v(agg)))


class GraphSAGE(Module):
    """h' = ReLU(BN(U h + V mean_{j in N(i)} h_j)); isolated nodes use zero."""

    def __init__(self, rng, d: int, layers: int = 4):
        super().__init__()
        self.layers = [_SageLayer(rng, d) for _ in range(layers)]

    def __call__(self, graph: LabeledGraph, h: Tensor) -> Tensor:
        norm = getattr(graph, "_sage_cache", None)
        if norm is None:
            a = graph.adjacency.astype(np.float64)
            deg = a.sum(axis=1)
            norm = np.divide(a, deg[:, None], out=np.zeros_like(a),
                             where=deg[:, None] > 0)
            graph._sage_cache = norm
        mean_adj = Tensor(norm)
        for layer in self.layers:
            h = layer(mean_adj, h)
        return h


class _GatedNodeLayer(Module):
    def __init__(self, rng, d: int):
        super().__init__()
        self.u = Linear(rng, d, d, bias=False)
        self.v = Linear(rng, d, d, bias=False)
        self.bn = BatchNorm(d)


class _GatedEdgeLayer(Module):
    def __init__(self, rng, d: int):
        super().__init__()
        self.a = Linear(rng, d, d, bias=False)
        self.b = Linear(rng, d, d, bias=False)
        self.c = Linear(rng, d, d, bias=False)
        self.bn = BatchNorm(d)


class GatedGCN(Module):
    """Residual anisotropic layers with per-arc vector gates.

    Each undirected edge is expanded to two directed arcs. Gates start from
    all-ones arc features and are refreshed from the previous layer's node
    state: e_hat' = e_hat + ReLU(BN(A h_i + B h_j + C e_hat)), gate =
    sigma(e_hat) / (sum over incoming arcs + eps).
    """

    def __init__(self, rng, d: int, layers: int = 4):
        super().__init__()
        self.d = d
        self.node_layers = [_GatedNodeLayer(rng, d) for _ in range(layers)]
        # the first layer consumes the initial all-ones arc state unchanged
        self.edge_layers = [_GatedEdgeLayer(rng, d) for _ in range(layers - 1)]

    def __call__(self, graph: LabeledGraph, h: Tensor) -> Tensor:
        cache = getattr(graph, "_arc_cache", None)
        if cache is None:
            n = graph.n_nodes
            dst, src = np.nonzero(graph.adjacency)  # arc j -> i as (i=dst, j=src)
            cache = (dst.size, ScatterPlan(dst, n), ScatterPlan(src, n))
            graph._arc_cache = cache
        n_arcs, dst_plan, src_plan = cache
        if n_arcs == 0:
            for layer in self.node_layers:
                h = h + relu(layer.bn(layer.u(h)))
            return h

        e_hat = Tensor(np.ones((n_arcs, self.d)))
        h_prev = h
        for li, layer in enumerate(self.node_layers):
            if li >= 1:
                el = self.edge_layers[li - 1]
                arc_in = (gather_rows_planned(el.a(h_prev), dst_plan)
                          + gather_rows_planned(el.b(h_prev), src_plan)
                          + el.c(e_hat))
                e_hat = e_hat + relu(el.bn(arc_in))
            sig = sigmoid(e_hat)
            denom = scatter_sum(sig, dst_plan) + Tensor(GATE_EPS)
            gate = sig / gather_rows_planned(denom, dst_plan)
            msg = mul(gate, gather_rows_planned(layer.v(h), src_plan))
            agg = scatter_sum(msg, dst_plan)
            h_new = h + relu(layer.bn(add(layer.u(h), agg)))
            h_prev = h
            h = h_new
        return h


def build_encoder(rng, config: GcnConfig):
    config.validate()
    if config.variant == "graphsage":
        return GraphSAGE(rng, config.hidden_dim, config.layers)
    return GatedGCN(rng, config.hidden_dim, config.layers)
