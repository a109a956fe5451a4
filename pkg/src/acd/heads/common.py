"""Shared pieces for the clustering heads: posterior samples and small helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graphs import canonicalize_labels
from ..tensor import Tensor, matmul

__all__ = ["PosteriorSample", "tile_rows", "stable_softmax", "spawn_rngs"]


@dataclass
class PosteriorSample:
    """One full community assignment with its model score.

    labels are canonical; score is the model log-probability for NCP, a
    surrogate log-probability for CCP, and a confidence log-product for DAC.
    diagnostics carries per-step bookkeeping such as network-call counters.
    """

    labels: np.ndarray
    score: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = canonicalize_labels(self.labels)
        if not np.isfinite(self.score):
            raise ValueError(f"posterior sample score must be finite, got {self.score}")

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0


def tile_rows(row: Tensor, m: int) -> Tensor:
    """Repeat a 1 x d tensor into m rows (differentiable)."""
    return matmul(Tensor(np.ones((m, 1))), row)


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def spawn_rngs(rng: np.random.Generator, count: int):
    """Independent child generators, reproducible from the parent stream."""
    seeds = rng.integers(0, 2**63 - 1, size=count)
    return [np.random.default_rng(int(s)) for s in seeds]
