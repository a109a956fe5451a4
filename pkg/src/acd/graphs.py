"""Generative models of community-structured graphs and dataset serialization.

Families:
  * general SBM: CRP-partitioned labels with Beta-distributed block
    probabilities and a minimum-community-size filter,
  * symmetric log-degree SBM: K equal communities, p = a*log(N)/N within and
    q = b*log(N)/N between.

Graphs are reproducible under parallel generation: each draw uses an
independent counter-based RNG stream keyed by (global seed, graph index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LabeledGraph",
    "ClusterSets",
    "GeneralSbmConfig",
    "SymmetricSbmConfig",
    "graph_rng",
    "sample_crp",
    "canonicalize_labels",
    "labels_to_sets",
    "sets_to_labels",
    "sample_sbm_edges",
    "gen_general_sbm",
    "gen_symmetric_log_sbm",
    "save_graphs",
    "load_graphs",
]


@dataclass
class LabeledGraph:
    """Undirected simple graph with optional community labels and features.

    adjacency is a symmetric 0/1 matrix with zero diagonal; labels, when
    present, are canonical positive integers (first occurrences 1,2,3,... in
    node order).
    """

    adjacency: np.ndarray
    labels: np.ndarray | None = None
    features: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.uint8)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        # lazy per-graph caches (never serialized)
        self._posenc_cache = None

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_communities(self) -> int:
        if self.labels is None:
            raise ValueError("graph has no labels")
        return int(self.labels.max()) if self.labels.size else 0

    def validate(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency must be binary")
        if self.labels is not None:
            if len(self.labels) != a.shape[0]:
                raise ValueError("labels length must match node count")
            if not np.array_equal(self.labels, canonicalize_labels(self.labels)):
                raise ValueError("labels must be canonical")
        return self


@dataclass
class GeneralSbmConfig:
    n_min: int = 50
    n_max: int = 350
    alpha: float = 3.0
    beta_within: tuple = (6.0, 4.0)
    beta_between: tuple = (1.0, 7.0)
    min_community_size: int = 5
    max_retries: int = 100

    def validate(self):
        if self.n_min > self.n_max or self.n_min < 1:
            raise ValueError(f"empty node range [{self.n_min}, {self.n_max}]")
        if self.alpha <= 0:
            raise ValueError("CRP concentration must be positive")
        for pair in (self.beta_within, self.beta_between):
            if pair[0] <= 0 or pair[1] <= 0:
                raise ValueError(f"Beta parameters must be positive, got {pair}")
        return self


@dataclass
class SymmetricSbmConfig:
    n: int
    k: int
    a: float
    b: float

    @property
    def p(self) -> float:
        return self.a * np.log(self.n) / self.n

    @property
    def q(self) -> float:
        return self.b * np.log(self.n) / self.n

    @classmethod
    def from_pq(cls, n: int, k: int, p: float, q: float) -> "SymmetricSbmConfig":
        scale = n / np.log(n)
        return cls(n=n, k=k, a=p * scale, b=q * scale)

    def validate(self):
        if self.n % self.k != 0:
            raise ValueError(f"K={self.k} must divide N={self.n}")
        for name, val in (("p", self.p), ("q", self.q)):
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val:.6g} outside [0,1] after log scaling")
        return self


class ClusterSets:
    """Partition of 1..N as disjoint index sets, ordered by minimum element.

    Indices are 0-based internally; canonical order sorts sets by their
    smallest member.
    """

    def __init__(self, sets):
        self.sets = [sorted(s) for s in sets]
        self.sets.sort(key=lambda s: s[0])

    @property
    def k(self) -> int:
        return len(self.sets)

    @property
    def n(self) -> int:
        return sum(len(s) for s in self.sets)

    def validate(self):
        seen = set()
        for s in self.sets:
            if not s:
                raise ValueError("empty cluster set")
            if seen & set(s):
                raise ValueError("cluster sets overlap")
            seen |= set(s)
        if seen != set(range(self.n)):
            raise ValueError("cluster sets must cover 0..N-1")
        return self

    def __eq__(self, other):
        return isinstance(other, ClusterSets) and self.sets == other.sets

    def __repr__(self):
        return f"ClusterSets({self.sets})"


def graph_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream keyed by (global seed, graph index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def canonicalize_labels(labels) -> np.ndarray:
    """Relabel so first occurrences appear as 1,2,3,... in node order."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty(len(labels), dtype=np.int64)
    nxt = 1
    for i, lab in enumerate(labels):
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = nxt
            nxt += 1
        out[i] = mapping[lab]
    return out


def sample_crp(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Chinese Restaurant Process partition of n points, canonical labels.

    Point i joins existing cluster k with probability n_k/(i-1+alpha) and a
    new cluster with probability alpha/(i-1+alpha).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    labels = np.empty(n, dtype=np.int64)
    labels[0] = 1
    counts = [1]
    for i in range(1, n):
        total = i + alpha
        r = rng.random() * total
        acc = 0.0
        chosen = len(counts)  # default: new cluster
        for k, c in enumerate(counts):
            acc += c
            if r < acc:
                chosen = k
                break
        if chosen == len(counts):
            counts.append(1)
        else:
            counts[chosen] += 1
        labels[i] = chosen + 1
    return labels


def labels_to_sets(labels) -> ClusterSets:
    """Group node indices by label. Non-canonical labels are canonicalized."""
    labels = canonicalize_labels(labels)
    k = int(labels.max()) if len(labels) else 0
    sets = [np.flatnonzero(labels == j + 1).tolist() for j in range(k)]
    return ClusterSets(sets)


def sets_to_labels(sets: ClusterSets) -> np.ndarray:
    labels = np.zeros(sets.n, dtype=np.int64)
    for s in sets.sets:
        labels[s] = 0  # placeholder, assigned below in canonical order
    for j, s in enumerate(sets.sets):
        labels[s] = j + 1
    return canonicalize_labels(labels)


def sample_sbm_edges(labels, phi, rng: np.random.Generator,
                     meta: dict | None = None) -> LabeledGraph:
    """Draw edges independently: pair {i,j} present w.p. phi[c_i, c_j]."""
    labels = canonicalize_labels(labels)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi < 0.0) or np.any(phi > 1.0):
        bad = phi[(phi < 0) | (phi > 1)].flat[0]
        raise ValueError(f"edge probability {bad:.6g} outside [0,1]")
    n = len(labels)
    prob = phi[labels - 1][:, labels - 1]
    u = rng.random((n, n))
    upper = np.triu(u < prob, k=1)
    adj = (upper | upper.T).astype(np.uint8)
    return LabeledGraph(adj, labels=labels, meta=meta or {})


def _beta_via_gammas(a: float, b: float, rng: np.random.Generator) -> float:
    # Beta(a,b) as g1/(g1+g2) from two Gamma draws
    g1 = rng.gamma(a)
    g2 = rng.gamma(b)
    return g1 / (g1 + g2)


def gen_general_sbm(config: GeneralSbmConfig, rng: np.random.Generator) -> LabeledGraph:
    """CRP-partitioned SBM with Beta block probabilities and min-size filter.

    Communities smaller than the minimum size are deleted (their nodes
    removed, the graph reindexed, labels recanonicalized). A degenerate draw
    that removes every community is retried a bounded number of times.
    """
    config.validate()
    for _ in range(config.max_retries):
        n = int(rng.integers(config.n_min, config.n_max + 1))
        labels = sample_crp(n, config.alpha, rng)
        k = int(labels.max())
        phi = np.empty((k, k))
        for k1 in range(k):
            phi[k1, k1] = _beta_via_gammas(*config.beta_within, rng)
            for k2 in range(k1 + 1, k):
                val = _beta_via_gammas(*config.beta_between, rng)
                phi[k1, k2] = val
                phi[k2, k1] = val
        graph = sample_sbm_edges(labels, phi, rng)
        counts = np.bincount(labels)[1:]
        keep_labels = np.flatnonzero(counts >= config.min_community_size) + 1
        if keep_labels.size == 0:
            continue
        keep_nodes = np.flatnonzero(np.isin(labels, keep_labels))
        adj = graph.adjacency[np.ix_(keep_nodes, keep_nodes)]
        new_labels = canonicalize_labels(labels[keep_nodes])
        return LabeledGraph(adj, labels=new_labels, meta={"family": "general-sbm"})
    raise RuntimeError(
        f"all communities removed in {config.max_retries} consecutive draws"
    )


def gen_symmetric_log_sbm(config: SymmetricSbmConfig,
                          rng: np.random.Generator) -> LabeledGraph:
    """K equal communities with log-degree connection probabilities."""
    config.validate()
    n, k = config.n, config.k
    size = n // k
    labels = np.repeat(np.arange(1, k + 1), size)
    phi = np.full((k, k), config.q)
    np.fill_diagonal(phi, config.p)
    graph = sample_sbm_edges(labels, phi, rng)
    graph.meta.update(
        family="sym-sbm", a=config.a, b=config.b, k=k, p=config.p, q=config.q
    )
    return graph


# ---------------------------------------------------------------------------
# serialization: line-delimited JSON records plus a binary cache


def _graph_to_record(g: LabeledGraph) -> dict:
    iu, ju = np.nonzero(np.triu(g.adjacency, k=1))
    rec = {
        "n": g.n_nodes,
        "edges": np.stack([iu, ju], axis=1).tolist() if iu.size else [],
        "meta": g.meta,
    }
    if g.labels is not None:
        rec["labels"] = g.labels.tolist()
    return rec


def _graph_from_record(rec: dict) -> LabeledGraph:
    n = rec["n"]
    adj = np.zeros((n, n), dtype=np.uint8)
    for i, j in rec["edges"]:
        adj[i, j] = 1
        adj[j, i] = 1
    labels = np.asarray(rec["labels"], dtype=np.int64) if "labels" in rec else None
    return LabeledGraph(adj, labels=labels, meta=rec.get("meta", {}))


def _cache_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".cache.npz")


def save_graphs(path, graphs, write_cache: bool = True):
    """One JSON record per line; also writes a .cache.npz for fast reload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for g in graphs:
            f.write(json.dumps(_graph_to_record(g), sort_keys=True) + "\n")
    if write_cache:
        _write_cache(_cache_path(path), graphs)


def _write_cache(cache_path: Path, graphs):
    arrays = {"count": np.asarray(len(graphs))}
    for i, g in enumerate(graphs):
        arrays[f"adj_{i}"] = np.packbits(g.adjacency)
        arrays[f"n_{i}"] = np.asarray(g.n_nodes)
        if g.labels is not None:
            arrays[f"labels_{i}"] = g.labels
        arrays[f"meta_{i}"] = np.frombuffer(
            json.dumps(g.meta, sort_keys=True).encode(), dtype=np.uint8
        )
    np.savez_compressed(cache_path, **arrays)


def _read_cache(cache_path: Path):
    with np.load(cache_path) as z:
        count = int(z["count"])
        graphs = []
        for i in range(count):
            n = int(z[f"n_{i}"])
            bits = np.unpackbits(z[f"adj_{i}"], count=n * n)
            adj = bits.reshape(n, n).astype(np.uint8)
            labels = z[f"labels_{i}"] if f"labels_{i}" in z.files else None
            meta = json.loads(bytes(z[f"meta_{i}"]).decode())
            graphs.append(LabeledGraph(adj, labels=labels, meta=meta))
    return graphs


def load_graphs(path, use_cache: bool = True):
    """Reload a dataset file; prefers the binary cache when it is current."""
    path = Path(path)
    cache = _cache_path(path)
    if use_cache and cache.exists() and cache.stat().st_mtime >= path.stat().st_mtime:
        return _read_cache(cache)
    graphs = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                graphs.append(_graph_from_record(json.loads(line)))
    return graphs
