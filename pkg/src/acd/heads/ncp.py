"""Pointwise sequential amortized clustering (variable-input softmax).

Clusters are encoded by sums H_k of per-point codes h(x_i); the global state
G sums g(H_k) over clusters; unassigned points are summarized by a sum U of
codes u(x_i). The probability that point n joins cluster k (or opens a new
one) is a softmax over f(G with x_n added to k, U).

The training loss is teacher-forced, so every step's cluster state is known
in advance; the whole sequence is evaluated in a handful of batched MLP
calls by assembling constant selection matrices over the per-point codes.
"""

from __future__ import annotations

import numpy as np

from ..attention import ISAB
from ..graphs import canonicalize_labels
from ..nn import MLP, Module
from ..tensor import (
    Tensor,
    concat,
    exp,
    gather_rows,
    log,
    matmul,
    no_grad,
    reduce_sum,
)
from .common import PosteriorSample, stable_softmax

__all__ = ["NCPHead"]


class NCPHead(Module):
    def __init__(self, rng, d: int, attn: bool = False,
                 heads: int = 4, m_inducing: int = 32):
        super().__init__()
        self.d = d
        self.attn = attn
        if attn:
            self.h_enc = ISAB(rng, d, heads, m_inducing)
            self.u_enc = ISAB(rng, d, heads, m_inducing)
        else:
            self.h_enc = MLP(rng, d, d, d, depth=2)
            self.u_enc = MLP(rng, d, d, d, depth=2)
        self.g = MLP(rng, d, d, d, depth=5)
        self.f = MLP(rng, 2 * d, d, 1, depth=5)

    def point_codes(self, x: Tensor):
        """Per-point codes h(x_i), u(x_i); one pass for the whole graph."""
        return self.h_enc(x), self.u_enc(x)

    # ------------------------------------------------------------------
    # training loss

    def loss(self, x: Tensor, labels, rng: np.random.Generator) -> Tensor:
        """Negative sequential log-likelihood under a random node order."""
        n = x.shape[0]
        perm = rng.permutation(n)
        xp = gather_rows(x, perm)
        labels_p = canonicalize_labels(np.asarray(labels)[perm])
        return self.nll_fixed_order(xp, labels_p)

    def nll_fixed_order(self, x: Tensor, labels) -> Tensor:
        """-sum_n log p(c_n | c_1:n-1, x) for the given node order."""
        labels = canonicalize_labels(labels)
        n = x.shape[0]
        if n == 1:
            return reduce_sum(x) * Tensor(0.0)
        hbar, ubar = self.point_codes(x)

        # state t = members of cluster labels[t] among points 0..t
        state_members = np.zeros((n, n))
        for t in range(n):
            state_members[t, : t + 1] = labels[: t + 1] == labels[t]
        cur_state = {}  # cluster -> latest state index
        seg_of_row = []
        cand_rows = []   # rows over points: H-part indicator + e_t
        dmat_cols = []   # (state_col or None, own candidate col)
        gsel_t = []
        base_cols = []   # per step: current state columns entering G_base
        chosen = np.empty(n, dtype=np.intp)
        r = 0
        for t in range(n):
            k_t = int(labels[:t].max()) if t else 0
            base_cols.append([cur_state[k] for k in range(1, k_t + 1)])
            for k in range(1, k_t + 1):
                row = state_members[cur_state[k]].copy()
                row[t] = 1.0
                cand_rows.append(row)
                dmat_cols.append((cur_state[k], r))
                gsel_t.append(t)
                seg_of_row.append(t)
                if labels[t] == k:
                    chosen[t] = r
                r += 1
            new_row = np.zeros(n)
            new_row[t] = 1.0
            cand_rows.append(new_row)
            dmat_cols.append((None, r))
            gsel_t.append(t)
            seg_of_row.append(t)
            if labels[t] == k_t + 1:
                chosen[t] = r
            r += 1
            cur_state[int(labels[t])] = t
        n_rows = r

        a_sel = np.vstack([state_members, np.asarray(cand_rows)])
        gsel = np.zeros((n_rows, n))
        gsel[np.arange(n_rows), gsel_t] = 1.0
        dmat = np.zeros((n_rows, n + n_rows))
        for rr, (state_col, own) in enumerate(dmat_cols):
            if state_col is not None:
                dmat[rr, state_col] = -1.0
            dmat[rr, n + own] = 1.0
        b_rows = np.zeros((n, n + n_rows))
        for t, cols in enumerate(base_cols):
            b_rows[t, cols] = 1.0
        suf = np.triu(np.ones((n, n)), k=1)
        seg = np.zeros((n, n_rows))
        seg[seg_of_row, np.arange(n_rows)] = 1.0

        g_out = self.g(matmul(Tensor(a_sel), hbar))           # (n + R) x d
        g_base = matmul(Tensor(b_rows), g_out)                # n x d
        g_cand = matmul(Tensor(gsel), g_base) + matmul(Tensor(dmat), g_out)
        u_mat = matmul(Tensor(suf), ubar)
        u_cand = matmul(Tensor(gsel), u_mat)
        logits = self.f(concat([g_cand, u_cand], axis=1))     # R x 1

        seg_max = np.empty((n_rows, 1))
        flat = logits.data[:, 0]
        for t in range(n):
            mask = seg[t] > 0
            seg_max[mask, 0] = flat[mask].max()
        z = logits - Tensor(seg_max)
        segsum = matmul(Tensor(seg), exp(z))                  # n x 1
        return reduce_sum(log(segsum)) - reduce_sum(gather_rows(z, chosen))

    # ------------------------------------------------------------------
    # single-step distribution and sampling

    def step_distribution(self, x: Tensor, prefix_labels, n_pos: int) -> np.ndarray:
        """p(c_n = k | c_1:n-1, x) over the K+1 choices; n_pos is 1-based."""
        n = x.shape[0]
        if not 1 <= n_pos <= n:
            raise ValueError(f"step position {n_pos} out of range 1..{n}")
        prefix = canonicalize_labels(prefix_labels) if len(prefix_labels) else np.zeros(0, dtype=np.int64)
        if len(prefix) != n_pos - 1:
            raise ValueError("prefix length must be n_pos - 1")
        with no_grad():
            hbar, ubar = self.point_codes(x)
            hv, uv = hbar.data, ubar.data
            k = int(prefix.max()) if len(prefix) else 0
            h_states = np.zeros((k, self.d))
            for kk in range(1, k + 1):
                h_states[kk - 1] = hv[: n_pos - 1][prefix == kk].sum(axis=0)
            u_agg = uv[n_pos:].sum(axis=0) if n_pos < n else np.zeros(self.d)
            return self._candidate_probs(hv[n_pos - 1], h_states, u_agg)[0]

    def _candidate_probs(self, h_point, h_states, u_agg, g_states=None, g_base=None):
        """Softmax over K existing clusters plus a new one; returns
        (probs, g rows of the candidate states) for incremental reuse."""
        k = h_states.shape[0]
        cand = np.vstack([h_states + h_point, h_point[None, :]])
        g_cand = self.g(Tensor(cand)).data
        if g_states is None:
            g_states = self.g(Tensor(h_states)).data if k else np.zeros((0, self.d))
        if g_base is None:
            g_base = g_states.sum(axis=0)
        g_rows = np.vstack([g_base - g_states + g_cand[:k], (g_base + g_cand[k])[None, :]]) \
            if k else g_cand[k][None, :] + g_base
        f_in = np.concatenate([g_rows, np.tile(u_agg, (k + 1, 1))], axis=1)
        logits = self.f(Tensor(f_in)).data[:, 0]
        return stable_softmax(logits), g_cand

    def sample(self, x: Tensor, rng: np.random.Generator, n_samples: int):
        """Sequential posterior samples sharing one random node order.

        Each sample costs N network-step evaluations; the score is the exact
        sequential log-probability of the drawn assignment.
        """
        n = x.shape[0]
        with no_grad():
            hbar, ubar = self.point_codes(x)
        hv, uv = hbar.data, ubar.data
        perm = rng.permutation(n)
        hv, uv = hv[perm], uv[perm]
        suffix = np.zeros((n + 1, self.d))
        for t in range(n - 1, -1, -1):
            suffix[t] = suffix[t + 1] + uv[t]
        out = []
        for _ in range(n_samples):
            labels_perm = np.zeros(n, dtype=np.int64)
            h_states = np.zeros((0, self.d))
            g_states = np.zeros((0, self.d))
            g_base = np.zeros(self.d)
            score = 0.0
            calls = 0
            with no_grad():
                for t in range(n):
                    probs, g_cand = self._candidate_probs(
                        hv[t], h_states, suffix[t + 1], g_states, g_base
                    )
                    calls += 1
                    choice = int(rng.choice(len(probs), p=probs))
                    score += float(np.log(probs[choice]))
                    k = h_states.shape[0]
                    if choice == k:
                        h_states = np.vstack([h_states, hv[t][None, :]])
                        g_states = np.vstack([g_states, g_cand[k][None, :]])
                        g_base = g_base + g_cand[k]
                    else:
                        g_base = g_base - g_states[choice] + g_cand[choice]
                        h_states[choice] = h_states[choice] + hv[t]
                        g_states[choice] = g_cand[choice]
                    labels_perm[t] = choice + 1
            labels = np.zeros(n, dtype=np.int64)
            labels[perm] = labels_perm
            out.append(
                PosteriorSample(labels, score, {"network_calls": calls})
            )
        return out
