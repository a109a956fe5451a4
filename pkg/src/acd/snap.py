"""Build community-labeled subgraph datasets from SNAP-style input files.

Inputs are an ungraph edge list (whitespace-separated node-id pairs, one per
line) and a community file (one community per line, whitespace-separated node
ids). Communities are split into train/val/test, then combined into small
multi-community subgraphs subject to pairwise size/overlap constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import LabeledGraph, canonicalize_labels

__all__ = [
    "SnapConstraints",
    "read_edge_file",
    "read_community_file",
    "compatible",
    "community_compatibility_graph",
    "enumerate_cliques",
    "extract_snap_subgraphs",
]


@dataclass
class SnapConstraints:
    union_min: int = 20   # exclusive
    union_max: int = 500  # exclusive
    imbalance: float = 20.0


def read_edge_file(path) -> dict:
    """Adjacency sets keyed by node id."""
    adj: dict = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            u, v = int(parts[0]), int(parts[1])
            if u == v:
                continue
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
    return adj


def read_community_file(path) -> list:
    comms = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            comms.append(sorted({int(x) for x in line.split()}))
    return comms


def compatible(c1, c2, constraints: SnapConstraints) -> bool:
    """Pairwise eligibility: disjoint, union size in bounds, balanced sizes."""
    s1, s2 = set(c1), set(c2)
    if s1 & s2:
        return False
    union = len(s1 | s2)
    if not (constraints.union_min < union < constraints.union_max):
        return False
    n1, n2 = len(s1), len(s2)
    return n1 < constraints.imbalance * n2 and n2 < constraints.imbalance * n1


def community_compatibility_graph(communities, constraints: SnapConstraints):
    """Adjacency sets over community indices; edge = compatible pair."""
    m = len(communities)
    compat = {i: set() for i in range(m)}
    for i in range(m):
        for j in range(i + 1, m):
            if compatible(communities[i], communities[j], constraints):
                compat[i].add(j)
                compat[j].add(i)
    return compat


def enumerate_cliques(compat: dict, sizes) -> list:
    """All cliques of the given sizes, each as a sorted tuple, enumerated once."""
    sizes = sorted(set(sizes))
    max_size = sizes[-1]
    out = []
    nodes = sorted(compat)

    def extend(clique, candidates):
        if len(clique) in size_set:
            out.append(tuple(clique))
        if len(clique) == max_size:
            return
        for v in sorted(candidates):
            extend(clique + [v], candidates & compat[v] & above[v])

    size_set = set(sizes)
    above = {v: {u for u in compat if u > v} for v in nodes}
    for v in nodes:
        extend([v], compat[v] & above[v])
    return out


def _induced_subgraph(adj: dict, communities, members) -> LabeledGraph:
    """Induced subgraph over the union of the member communities."""
    node_ids = sorted(set().union(*(set(communities[c]) for c in members)))
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(node_ids)
    a = np.zeros((n, n), dtype=np.uint8)
    for nid in node_ids:
        for nb in adj.get(nid, ()):
            j = index.get(nb)
            if j is not None:
                a[index[nid], j] = 1
                a[j, index[nid]] = 1
    labels = np.zeros(n, dtype=np.int64)
    for ci, c in enumerate(members):
        for nid in communities[c]:
            labels[index[nid]] = ci + 1
    return LabeledGraph(a, labels=canonicalize_labels(labels),
                        meta={"family": "snap", "communities": [int(c) for c in members]})


def _is_connected(g: LabeledGraph) -> bool:
    n = g.n_nodes
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    adj = g.adjacency
    while stack:
        v = stack.pop()
        for u in np.flatnonzero(adj[v]):
            if not seen[u]:
                seen[u] = True
                stack.append(int(u))
    return bool(seen.all())


def extract_snap_subgraphs(
    edge_file,
    community_file,
    split_spec=(0.6, 0.1, 0.3),
    constraints: SnapConstraints | None = None,
    rng: np.random.Generator | None = None,
    k="vary",
    max_per_split: int | None = None,
):
    """Extract multi-community subgraphs, split by community.

    k: a fixed community count per subgraph, or "vary" for cliques of size
    2-4 in the community-compatibility graph. Fixed-k tuples must induce a
    connected subgraph; eligible tuples beyond `max_per_split` are sampled
    uniformly. Returns {"train": [...], "val": [...], "test": [...]}.
    """
    constraints = constraints or SnapConstraints()
    rng = rng or np.random.default_rng(0)
    adj = read_edge_file(edge_file)
    communities = read_community_file(community_file)

    fracs = np.asarray(split_spec, dtype=np.float64)
    if fracs.shape != (3,) or np.any(fracs < 0) or fracs.sum() <= 0:
        raise ValueError(f"split_spec must be 3 nonnegative proportions, got {split_spec}")
    fracs = fracs / fracs.sum()
    order = rng.permutation(len(communities))
    n_train = int(round(fracs[0] * len(communities)))
    n_val = int(round(fracs[1] * len(communities)))
    split_ids = {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }

    sizes = [int(k)] if k != "vary" else [2, 3, 4]
    result = {}
    for split, ids in split_ids.items():
        local = [communities[i] for i in ids]
        compat = community_compatibility_graph(local, constraints)
        tuples = enumerate_cliques(compat, sizes)
        graphs = []
        for tup in tuples:
            g = _induced_subgraph(adj, local, tup)
            if k != "vary" and not _is_connected(g):
                continue
            graphs.append(g)
        if max_per_split is not None and len(graphs) > max_per_split:
            pick = rng.choice(len(graphs), size=max_per_split, replace=False)
            graphs = [graphs[i] for i in sorted(pick)]
        result[split] = graphs
    return result
