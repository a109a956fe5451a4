"""Laplacian eigenvector positional encodings for initial node features.

The symmetric normalized Laplacian L = I - D^{-1/2} A D^{-1/2} is
eigendecomposed; the globally smallest (trivial) eigenvector is dropped and
the next m eigenvectors become node features, zero-padded when the graph is
too small. Eigenvector signs are arbitrary, so training flips each column's
sign at random while evaluation fixes the first nonzero entry positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import LabeledGraph

__all__ = [
    "PosEncConfig",
    "normalized_laplacian",
    "laplacian_eigenpairs",
    "laplacian_pos_enc",
    "random_features",
]

_SIGN_TOL = 1e-8


@dataclass
class PosEncConfig:
    m: int = 20

    def validate(self):
        if self.m < 1:
            raise ValueError("positional encoding dimension must be >= 1")
        return self


def normalized_laplacian(graph: LabeledGraph) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2}; isolated nodes use D^{-1/2} = 0."""
    a = graph.adjacency.astype(np.float64)
    deg = a.sum(axis=1)
    with np.errstate(divide="ignore"):
        dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = -dinv[:, None] * a * dinv[None, :]
    np.fill_diagonal(lap, 1.0)
    return lap


def laplacian_eigenpairs(graph: LabeledGraph):
    """Eigenvalues (ascending) and orthonormal eigenvectors of L.

    Cached on the graph object; the decomposition is deterministic per graph.
    """
    cached = getattr(graph, "_posenc_cache", None)
    if cached is not None:
        return cached
    lap = normalized_laplacian(graph)
    vals, vecs = np.linalg.eigh(lap)
    graph._posenc_cache = (vals, vecs)
    return vals, vecs


def laplacian_pos_enc(
    graph: LabeledGraph,
    config: PosEncConfig,
    rng: np.random.Generator | None = None,
    mode: str = "eval",
) -> np.ndarray:
    """N x m feature matrix from the smallest non-trivial eigenvectors.

    mode "train" multiplies each column by an independent random sign (needs
    rng); mode "eval" fixes each column's first entry with |v| > tol to be
    positive, so repeated calls agree.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    config.validate()
    n = graph.n_nodes
    _, vecs = laplacian_eigenpairs(graph)
    avail = min(config.m, max(n - 1, 0))
    feats = np.zeros((n, config.m))
    if avail > 0:
        cols = vecs[:, 1:1 + avail].copy()
        if mode == "train":
            if rng is None:
                raise ValueError("train mode needs an rng for sign flips")
            signs = np.where(rng.random(avail) < 0.5, -1.0, 1.0)
            cols *= signs
        else:
            for j in range(avail):
                nz = np.flatnonzero(np.abs(cols[:, j]) > _SIGN_TOL)
                if nz.size and cols[nz[0], j] < 0:
                    cols[:, j] = -cols[:, j]
        feats[:, :avail] = cols
    return feats


def random_features(graph: LabeledGraph, m: int, seed: int, index: int = 0) -> np.ndarray:
    """Baseline N x m standard-normal features, fixed per graph.

    Derived from a per-graph stream so recomputation reproduces the exact
    values without serializing them (stream key comes from the graph's own
    seed when present, else from the provided seed/index).
    """
    from .graphs import graph_rng

    gseed = graph.meta.get("feature_seed")
    rng = graph_rng(seed if gseed is None else gseed,
                    index if gseed is None else 0)
    return rng.standard_normal((graph.n_nodes, m))
