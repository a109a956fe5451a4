"""Non-probabilistic clusterwise head: anchored filtering with a BCE loss.

Uses the same attention backbone as the clusterwise VAE (ISAB round codes,
PMA/MAB aggregation of available points) but no latent variable and no
conditioning on previously formed clusters. Inference greedily grows one
cluster per round: points whose membership sigmoid strictly exceeds 1/2 join
the anchor; assigned points are filtered out between rounds.
"""

from __future__ import annotations

import numpy as np

from ..attention import ISAB, MAB, PMA
from ..graphs import canonicalize_labels, labels_to_sets
from ..nn import MLP, Module
from ..tensor import (
    Tensor,
    concat,
    gather_rows,
    mul,
    no_grad,
    reduce_sum,
    slice_axis,
    softplus,
)
from .common import PosteriorSample, tile_rows

__all__ = ["DACHead"]


class DACHead(Module):
    def __init__(self, rng, d: int, heads: int = 4, m_inducing: int = 32):
        super().__init__()
        self.d = d
        self.u_enc = MLP(rng, d, d, d, depth=3)
        self.isab_u = ISAB(rng, d, heads, m_inducing)
        self.mab_ua = MAB(rng, d, d, d, heads)
        self.pma_u = PMA(rng, d, heads)
        self.rho = MLP(rng, 3 * d, d, 1, depth=4)

    def _round_codes(self, ubar: Tensor, anchor: int, avail):
        rows = self.isab_u(gather_rows(ubar, [anchor] + list(avail)))
        d_code = slice_axis(rows, 0, 0, 1)
        a_codes = slice_axis(rows, 0, 1, len(avail) + 1)
        u_agg = self.pma_u(self.mab_ua(a_codes, d_code))
        return d_code, a_codes, u_agg

    def _logits(self, ubar: Tensor, anchor: int, avail) -> Tensor:
        d_code, a_codes, u_agg = self._round_codes(ubar, anchor, avail)
        m = len(avail)
        rho_in = concat(
            [a_codes, tile_rows(d_code, m), tile_rows(u_agg, m)], axis=1
        )
        return self.rho(rho_in)

    def loss(self, x: Tensor, labels, rng: np.random.Generator) -> Tensor:
        """Summed binary cross-entropy of anchored membership prediction."""
        labels = canonicalize_labels(labels)
        sets = labels_to_sets(labels).sets
        n = x.shape[0]
        order = rng.permutation(len(sets))
        ubar = self.u_enc(x)
        remaining = np.ones(n, dtype=bool)
        total = Tensor(np.asarray(0.0))
        for ci in order:
            members = sets[ci]
            i_k = np.flatnonzero(remaining)
            anchor = int(members[rng.integers(len(members))])
            avail = [i for i in i_k if i != anchor]
            if avail:
                member_set = set(members)
                bits = np.array([i in member_set for i in avail]).astype(float)
                logits = self._logits(ubar, anchor, avail)
                sign = Tensor((1.0 - 2.0 * bits)[:, None])
                total = total + reduce_sum(softplus(mul(logits, sign)))
            remaining[members] = False
        return total

    def cluster(self, x: Tensor, rng: np.random.Generator):
        """Greedy anchored filtering; returns (labels, rounds, confidence).

        The confidence is the log-product of the sigmoid probabilities of the
        realized membership decisions; DAC is not probabilistic, so this is a
        ranking score rather than a log-probability.
        """
        n = x.shape[0]
        with no_grad():
            ubar = self.u_enc(x)
            remaining = list(range(n))
            labels = np.zeros(n, dtype=np.int64)
            cid = 0
            rounds = 0
            confidence = 0.0
            while remaining:
                rounds += 1
                cid += 1
                anchor = int(remaining[rng.integers(len(remaining))])
                avail = [i for i in remaining if i != anchor]
                if avail:
                    logits = self._logits(ubar, anchor, avail).data[:, 0]
                    probs = 1.0 / (1.0 + np.exp(-logits))
                    joins = probs > 0.5
                    confidence += float(
                        np.log(np.where(joins, probs, 1.0 - probs)).sum()
                    )
                    members = [anchor] + [a for a, j in zip(avail, joins) if j]
                else:
                    members = [anchor]
                labels[members] = cid
                remaining = [i for i in remaining if labels[i] == 0]
        return canonicalize_labels(labels), rounds, confidence

    def sample(self, x: Tensor, rng: np.random.Generator, n_samples: int):
        """Assignments differ only through the random anchor draws."""
        out = []
        for _ in range(n_samples):
            labels, rounds, confidence = self.cluster(x, rng)
            out.append(PosteriorSample(labels, confidence, {"rounds": rounds}))
        return out
