from itertools import combinations

import numpy as np
import pytest

from acd.snap import (
    SnapConstraints,
    community_compatibility_graph,
    compatible,
    enumerate_cliques,
    extract_snap_subgraphs,
    read_community_file,
    read_edge_file,
)


class TestPairConstraints:
    def test_accepted_pair(self):
        c1 = list(range(30))
        c2 = list(range(100, 140))
        assert compatible(c1, c2, SnapConstraints())

    def test_union_too_small(self):
        c1 = list(range(10))
        c2 = list(range(100, 105))
        assert not compatible(c1, c2, SnapConstraints())

    def test_overlap_rejected(self):
        c1 = list(range(30))
        c2 = list(range(25, 60))
        assert not compatible(c1, c2, SnapConstraints())

    def test_imbalance_rejected(self):
        c1 = list(range(400))
        c2 = list(range(1000, 1015))
        assert not compatible(c1, c2, SnapConstraints(union_max=5000))


def _write_toy_files(tmp_path, communities, extra_edges=()):
    """Five communities; edges densely within, plus the given extras."""
    edges = set(extra_edges)
    for comm in communities:
        for u, v in combinations(comm, 2):
            edges.add((u, v))
    edge_file = tmp_path / "toy.ungraph.txt"
    edge_file.write_text(
        "# comment line\n" + "\n".join(f"{u}\t{v}" for u, v in sorted(edges)) + "\n"
    )
    cmty_file = tmp_path / "toy.cmty.txt"
    cmty_file.write_text("\n".join(" ".join(map(str, c)) for c in communities) + "\n")
    return edge_file, cmty_file


@pytest.fixture
def toy(tmp_path):
    communities = [
        list(range(0, 15)),      # A
        list(range(100, 112)),   # B
        list(range(200, 216)),   # C
        list(range(300, 311)),   # D
        list(range(400, 460)),   # E (big)
    ]
    bridges = [(0, 100), (100, 200), (200, 300), (0, 200), (100, 300), (0, 300),
               (0, 400), (100, 400), (200, 400), (300, 400)]
    return _write_toy_files(tmp_path, communities, bridges), communities


def test_file_readers(toy):
    (edge_file, cmty_file), communities = toy
    adj = read_edge_file(edge_file)
    comms = read_community_file(cmty_file)
    assert comms == [sorted(c) for c in communities]
    assert 1 in adj[0] and 0 in adj[1]


def test_clique_enumeration_matches_brute_force(toy):
    (_, cmty_file), communities = toy
    comms = read_community_file(cmty_file)
    constraints = SnapConstraints()
    compat = community_compatibility_graph(comms, constraints)
    got = sorted(enumerate_cliques(compat, [2, 3, 4]))
    expected = []
    for size in (2, 3, 4):
        for tup in combinations(range(len(comms)), size):
            if all(j in compat[i] for i, j in combinations(tup, 2)):
                expected.append(tup)
    assert got == sorted(expected)


def test_extract_varying_k(toy):
    (edge_file, cmty_file), _ = toy
    splits = extract_snap_subgraphs(
        edge_file, cmty_file, split_spec=(1.0, 0.0, 0.0),
        rng=np.random.default_rng(0), k="vary",
    )
    graphs = splits["train"]
    assert graphs, "expected at least one extracted subgraph"
    for g in graphs:
        g.validate()
        assert 2 <= g.n_communities <= 4
        # labels follow community membership: within-community nodes share labels
        sizes = np.bincount(g.labels)[1:]
        assert sizes.min() >= 2


def test_extract_fixed_k_connected(toy):
    (edge_file, cmty_file), _ = toy
    splits = extract_snap_subgraphs(
        edge_file, cmty_file, split_spec=(1.0, 0.0, 0.0),
        rng=np.random.default_rng(0), k=3,
    )
    for g in splits["train"]:
        assert g.n_communities == 3
        # connectivity check: BFS reaches every node
        n = g.n_nodes
        seen = {0}
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for u in np.flatnonzero(g.adjacency[v]):
                if int(u) not in seen:
                    seen.add(int(u))
                    frontier.append(int(u))
        assert len(seen) == n


def test_max_per_split_caps_uniformly(toy):
    (edge_file, cmty_file), _ = toy
    splits = extract_snap_subgraphs(
        edge_file, cmty_file, split_spec=(1.0, 0.0, 0.0),
        rng=np.random.default_rng(3), k="vary", max_per_split=2,
    )
    assert len(splits["train"]) == 2


def test_split_proportions(toy):
    (edge_file, cmty_file), _ = toy
    splits = extract_snap_subgraphs(
        edge_file, cmty_file, split_spec=(0.6, 0.2, 0.2),
        rng=np.random.default_rng(1), k="vary",
    )
    assert set(splits) == {"train", "val", "test"}


def test_bad_split_spec(toy):
    (edge_file, cmty_file), _ = toy
    with pytest.raises(ValueError, match="split_spec"):
        extract_snap_subgraphs(edge_file, cmty_file, split_spec=(1.0, 0.0),
                               rng=np.random.default_rng(0))


def test_missing_file_raises_io_error(tmp_path):
    with pytest.raises(OSError):
        read_edge_file(tmp_path / "absent.txt")
