"""Clusterwise amortized clustering trained as a conditional VAE.

Each cluster is generated by drawing an anchor uniformly from the remaining
points, a Gaussian latent z from a learned conditional prior, and independent
membership bits through a sigmoid classifier. Training maximizes an ELBO with
a learned Gaussian posterior over z; the anchor posterior is uniform over the
true cluster, so no discrete gradients are needed.

The attention variant swaps the mean aggregations for ISAB/PMA/MAB blocks:
per round, codes are re-encoded by ISAB over {anchor} + available points.
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
    log,
    matmul,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    slice_axis,
    softplus,
)
from .common import PosteriorSample, tile_rows

__all__ = ["CCPHead"]

SIGMA_FLOOR = 1e-6


class CCPHead(Module):
    def __init__(self, rng, d: int, attn: bool = False, d_z: int | None = None,
                 heads: int = 4, m_inducing: int = 32, n_importance: int = 16):
        super().__init__()
        self.d = d
        self.d_z = d_z or d
        self.attn = attn
        self.n_importance = n_importance
        self.h_enc = MLP(rng, d, d, d, depth=3)
        self.u_enc = MLP(rng, d, d, d, depth=3)
        if attn:
            self.isab_u = ISAB(rng, d, heads, m_inducing)
            self.mab_ua = MAB(rng, d, d, d, heads)
            self.pma_u = PMA(rng, d, heads)
            self.pma_in = PMA(rng, d, heads)
            self.pma_out = PMA(rng, d, heads)
            self.pma_h = PMA(rng, d, heads)
        self.g = MLP(rng, d, d, d, depth=3)
        self.prior = MLP(rng, 3 * d, d, 2 * self.d_z, depth=5)
        self.posterior = MLP(rng, 4 * d, d, 2 * self.d_z, depth=5)
        self.rho = MLP(rng, self.d_z + 4 * d, d, 1, depth=4)

    # ------------------------------------------------------------------
    # encodings

    def _round_codes(self, x: Tensor, ubar: Tensor, anchor: int, avail):
        """(anchor code D, per-point codes of available points, U aggregate)."""
        m = len(avail)
        if self.attn:
            rows = self.isab_u(gather_rows(ubar, [anchor] + list(avail)))
            d_code = slice_axis(rows, 0, 0, 1)
            a_codes = slice_axis(rows, 0, 1, m + 1)
            u_agg = self.pma_u(self.mab_ua(a_codes, d_code))
        else:
            d_code = gather_rows(x, [anchor])
            a_codes = gather_rows(x, avail)
            u_agg = reduce_mean(gather_rows(ubar, avail), axis=0, keepdims=True)
        return d_code, a_codes, u_agg

    def _cluster_pool(self, hbar: Tensor, members) -> Tensor:
        rows = gather_rows(hbar, members)
        if self.attn:
            return self.pma_h(rows)
        return reduce_mean(rows, axis=0, keepdims=True)

    def _gauss_params(self, mlp: MLP, inp: Tensor):
        out = mlp(inp)
        mu = slice_axis(out, 1, 0, self.d_z)
        sigma = softplus(slice_axis(out, 1, self.d_z, 2 * self.d_z)) + Tensor(SIGMA_FLOOR)
        return mu, sigma

    # ------------------------------------------------------------------
    # ELBO training loss

    def loss(self, x: Tensor, labels, rng: np.random.Generator) -> Tensor:
        """Negative ELBO; clusters are visited in a uniformly random order."""
        labels = canonicalize_labels(labels)
        sets = labels_to_sets(labels).sets
        n = x.shape[0]
        order = rng.permutation(len(sets))
        hbar = self.h_enc(x)
        ubar_pt = self.u_enc(x)
        remaining = np.ones(n, dtype=bool)
        g_acc = Tensor(np.zeros((1, self.d)))
        anchor_terms = 0.0
        elbo_terms = []
        for ci in order:
            members = sets[ci]
            i_k = np.flatnonzero(remaining)
            anchor = int(members[rng.integers(len(members))])
            avail = [i for i in i_k if i != anchor]
            anchor_terms += np.log(len(members)) - np.log(len(i_k))
            if avail:
                member_set = set(members)
                bits = np.array([i in member_set for i in avail])
                d_code, a_codes, u_agg = self._round_codes(x, ubar_pt, anchor, avail)
                in_idx = np.flatnonzero(bits)
                out_idx = np.flatnonzero(~bits)
                ubar_for_subsets = a_codes if self.attn else gather_rows(ubar_pt, avail)
                a_in = self._posterior_subset(ubar_for_subsets, in_idx, "in")
                a_out = self._posterior_subset(ubar_for_subsets, out_idx, "out")
                mu_p, sig_p = self._gauss_params(self.prior, concat([d_code, u_agg, g_acc], axis=1))
                mu_q, sig_q = self._gauss_params(
                    self.posterior, concat([d_code, a_in, a_out, g_acc], axis=1)
                )
                eps = Tensor(rng.standard_normal((1, self.d_z)))
                z = mu_q + mul(sig_q, eps)
                m = len(avail)
                point_codes = a_codes
                rho_in = concat(
                    [tile_rows(z, m), point_codes, tile_rows(d_code, m),
                     tile_rows(u_agg, m), tile_rows(g_acc, m)],
                    axis=1,
                )
                logits = self.rho(rho_in)
                sign = Tensor((1.0 - 2.0 * bits)[:, None])
                loglik = -reduce_sum(softplus(mul(logits, sign)))
                kl = self._gauss_kl(mu_q, sig_q, mu_p, sig_p)
                elbo_terms.append(loglik - kl)
            g_acc = g_acc + self.g(self._cluster_pool(hbar, members))
            remaining[members] = False
        total = Tensor(np.asarray(anchor_terms))
        for term in elbo_terms:
            total = total + term
        return -total

    def _posterior_subset(self, codes: Tensor, idx, which):
        if len(idx) == 0:
            return Tensor(np.zeros((1, self.d)))
        sub = gather_rows(codes, list(idx))
        if not self.attn:
            return reduce_mean(sub, axis=0, keepdims=True)
        return (self.pma_in if which == "in" else self.pma_out)(sub)

    @staticmethod
    def _gauss_kl(mu_q, sig_q, mu_p, sig_p):
        """KL(q || p) for diagonal Gaussians, summed over dimensions."""
        dmu = mu_q - mu_p
        ratio2 = mul(sig_q / sig_p, sig_q / sig_p)
        return reduce_sum(
            log(sig_p) - log(sig_q)
            + (ratio2 + mul(dmu / sig_p, dmu / sig_p)) * Tensor(0.5)
            - Tensor(0.5)
        )

    # ------------------------------------------------------------------
    # sampling and scoring

    def sample(self, x: Tensor, rng: np.random.Generator, n_samples: int):
        """Clusterwise posterior samples; one network round per cluster.

        Scores use the importance-sampling surrogate (see `score`).
        """
        out = []
        for _ in range(n_samples):
            labels, rounds = self._sample_once(x, rng)
            sc, per_cluster = self.score(x, labels, self.n_importance, rng)
            out.append(PosteriorSample(labels, sc, {"rounds": rounds,
                                                    "cluster_scores": per_cluster}))
        return out

    def _sample_once(self, x: Tensor, rng: np.random.Generator):
        n = x.shape[0]
        with no_grad():
            hbar = self.h_enc(x)
            ubar_pt = self.u_enc(x)
            remaining = list(range(n))
            labels = np.zeros(n, dtype=np.int64)
            g_acc = Tensor(np.zeros((1, self.d)))
            cid = 0
            rounds = 0
            while remaining:
                rounds += 1
                cid += 1
                anchor = int(remaining[rng.integers(len(remaining))])
                avail = [i for i in remaining if i != anchor]
                if avail:
                    d_code, a_codes, u_agg = self._round_codes(x, ubar_pt, anchor, avail)
                    mu_p, sig_p = self._gauss_params(
                        self.prior, concat([d_code, u_agg, g_acc], axis=1)
                    )
                    z = mu_p.data + sig_p.data * rng.standard_normal((1, self.d_z))
                    m = len(avail)
                    rho_in = np.concatenate(
                        [np.tile(z, (m, 1)), a_codes.data,
                         np.tile(d_code.data, (m, 1)), np.tile(u_agg.data, (m, 1)),
                         np.tile(g_acc.data, (m, 1))],
                        axis=1,
                    )
                    logits = self.rho(Tensor(rho_in)).data[:, 0]
                    probs = 1.0 / (1.0 + np.exp(-logits))
                    joins = rng.random(m) < probs
                    members = [anchor] + [a for a, j in zip(avail, joins) if j]
                else:
                    members = [anchor]
                labels[members] = cid
                g_acc = g_acc + self.g(self._cluster_pool(hbar, members))
                remaining = [i for i in remaining if labels[i] == 0]
        return canonicalize_labels(labels), rounds

    def score(self, x: Tensor, labels, n_importance: int | None = None,
              rng: np.random.Generator | None = None):
        """Surrogate log-probability of a complete assignment.

        Per cluster in canonical order: the anchor prior term plus an
        n_importance-sample estimate of the marginal over z with the learned
        posterior as proposal. The anchor is taken to be the cluster's
        lowest-index member so that the score is a deterministic function of
        (x, labels) given the rng.
        """
        n_importance = n_importance or self.n_importance
        if n_importance < 1:
            raise ValueError("n_importance must be >= 1")
        rng = rng or np.random.default_rng(0)
        labels = canonicalize_labels(labels)
        sets = labels_to_sets(labels).sets
        n = x.shape[0]
        per_cluster = []
        with no_grad():
            hbar = self.h_enc(x)
            ubar_pt = self.u_enc(x)
            remaining = np.ones(n, dtype=bool)
            g_acc = Tensor(np.zeros((1, self.d)))
            for members in sets:
                i_k = np.flatnonzero(remaining)
                anchor = int(members[0])
                avail = [i for i in i_k if i != anchor]
                term = -np.log(len(i_k))
                if avail:
                    member_set = set(members)
                    bits = np.array([i in member_set for i in avail]).astype(float)
                    d_code, a_codes, u_agg = self._round_codes(x, ubar_pt, anchor, avail)
                    ubar_for_subsets = a_codes if self.attn else gather_rows(ubar_pt, avail)
                    in_idx = np.flatnonzero(bits > 0.5)
                    out_idx = np.flatnonzero(bits < 0.5)
                    a_in = self._posterior_subset(ubar_for_subsets, in_idx, "in")
                    a_out = self._posterior_subset(ubar_for_subsets, out_idx, "out")
                    mu_p, sig_p = self._gauss_params(
                        self.prior, concat([d_code, u_agg, g_acc], axis=1)
                    )
                    mu_q, sig_q = self._gauss_params(
                        self.posterior, concat([d_code, a_in, a_out, g_acc], axis=1)
                    )
                    mu_p, sig_p = mu_p.data[0], sig_p.data[0]
                    mu_q, sig_q = mu_q.data[0], sig_q.data[0]
                    m = len(avail)
                    sign = 1.0 - 2.0 * bits
                    log_ws = np.empty(n_importance)
                    base = np.concatenate(
                        [np.zeros((m, self.d_z)), a_codes.data,
                         np.tile(d_code.data, (m, 1)), np.tile(u_agg.data, (m, 1)),
                         np.tile(g_acc.data, (m, 1))],
                        axis=1,
                    )
                    for j in range(n_importance):
                        zj = mu_q + sig_q * rng.standard_normal(self.d_z)
                        base[:, : self.d_z] = zj
                        logits = self.rho(Tensor(base)).data[:, 0]
                        loglik = -np.logaddexp(0.0, sign * logits).sum()
                        log_ws[j] = (loglik
                                     + _diag_normal_logpdf(zj, mu_p, sig_p)
                                     - _diag_normal_logpdf(zj, mu_q, sig_q))
                    term += _logsumexp(log_ws) - np.log(n_importance)
                per_cluster.append(float(term))
                g_acc = g_acc + self.g(self._cluster_pool(hbar, members))
                remaining[members] = False
        return float(sum(per_cluster)), per_cluster


def _diag_normal_logpdf(z, mu, sigma):
    return -0.5 * np.sum(((z - mu) / sigma) ** 2 + np.log(2 * np.pi) + 2 * np.log(sigma))


def _logsumexp(v):
    m = v.max()
    return m + np.log(np.exp(v - m).sum())
