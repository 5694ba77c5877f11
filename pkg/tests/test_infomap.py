import math

import numpy as np
import pytest

from dccl.infomap import ConceptionAssignment, cluster, codelength, save_partition_csv
from dccl.simgraph import SimilarityGraph

from helpers import random_similarity_graph, set_partitions


def two_cliques() -> SimilarityGraph:
    edges = []
    for base in (0, 4):
        for i in range(4):
            for j in range(i + 1, 4):
                edges.append((base + i, base + j, 1.0))
    rows, cols, ws = zip(*edges)
    return SimilarityGraph(8, rows, cols, ws)


def complete_graph(n: int, w: float = 1.0) -> SimilarityGraph:
    rows, cols = np.triu_indices(n, k=1)
    return SimilarityGraph(n, rows, cols, np.full(rows.size, w))


def brute_force_optimum(graph: SimilarityGraph) -> tuple[float, tuple]:
    best, best_part = np.inf, None
    for part in set_partitions(graph.num_nodes):
        length = codelength(graph, np.asarray(part))
        if length < best:
            best, best_part = length, part
    return best, best_part


class TestCodelength:
    def test_two_cliques_is_two_bits(self):
        g = two_cliques()
        part = ConceptionAssignment.from_raw([0, 0, 0, 0, 1, 1, 1, 1])
        assert codelength(g, part) == pytest.approx(2.0, abs=1e-12)

    def test_single_module_reduces_to_node_entropy(self):
        g = two_cliques()
        p = g.strengths() / (2.0 * g.total_weight())
        expected = -sum(x * math.log2(x) for x in p)
        assert codelength(g, np.zeros(8, dtype=int)) == pytest.approx(expected, abs=1e-12)

    def test_single_edge_singletons_exceed_one_module(self):
        g = SimilarityGraph(2, [0], [1], [1.0])
        l_singletons = codelength(g, np.array([0, 1]))
        l_one = codelength(g, np.array([0, 0]))
        assert l_singletons == pytest.approx(3.0, abs=1e-12)
        assert l_one == pytest.approx(1.0, abs=1e-12)
        assert l_singletons > l_one

    def test_isolated_nodes_contribute_nothing(self):
        g = SimilarityGraph(4, [0], [1], [1.0])
        with_iso = codelength(g, np.array([0, 1, 2, 3]))
        g2 = SimilarityGraph(2, [0], [1], [1.0])
        without = codelength(g2, np.array([0, 1]))
        assert with_iso == pytest.approx(without, abs=1e-12)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            codelength(two_cliques(), np.zeros(5, dtype=int))

    def test_edgeless_graph_rejected(self):
        g = SimilarityGraph(3, [], [], [])
        with pytest.raises(ValueError):
            codelength(g, np.zeros(3, dtype=int))

    def test_module_relabeling_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            g = random_similarity_graph(rng)
            labels = rng.integers(0, 3, size=g.num_nodes)
            shuffled = rng.permutation(3)[labels]
            assert codelength(g, labels) == pytest.approx(
                codelength(g, shuffled), abs=1e-12
            )

    def test_node_relabeling_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = random_similarity_graph(rng)
            n = g.num_nodes
            perm = rng.permutation(n)
            # node i in the permuted graph is original node perm[i]
            rows = np.empty(n, dtype=np.int64)
            rows[perm] = np.arange(n)
            new_r = rows[g.rows]
            new_c = rows[g.cols]
            lo, hi = np.minimum(new_r, new_c), np.maximum(new_r, new_c)
            gp = SimilarityGraph(n, lo, hi, g.weights)
            labels = rng.integers(0, 3, size=n)
            assert codelength(g, labels) == pytest.approx(
                codelength(gp, labels[perm]), abs=1e-12
            )


class TestCluster:
    def test_two_cliques_exact(self):
        a = cluster(two_cliques(), seed=0)
        assert a.num_conceptions == 2
        assert np.array_equal(a.labels, [0, 0, 0, 0, 1, 1, 1, 1])
        assert codelength(two_cliques(), a) == pytest.approx(2.0, abs=1e-12)

    def test_edgeless_graph_gives_singletons(self):
        g = SimilarityGraph(5, [], [], [])
        a = cluster(g, seed=3)
        assert a.num_conceptions == 5
        assert np.array_equal(a.labels, np.arange(5))

    def test_complete_graph_single_module(self):
        for n in (4, 6, 8):
            g = complete_graph(n)
            a = cluster(g, seed=1)
            assert a.num_conceptions == 1
        best, part = brute_force_optimum(complete_graph(6))
        assert len(set(part)) == 1  # one module is the enumerated optimum

    def test_isolated_nodes_become_singletons(self):
        g = SimilarityGraph(5, [0, 1], [1, 2], [1.0, 1.0])
        a = cluster(g, seed=0)
        assert a.labels[3] != a.labels[4]
        assert np.sum(a.labels == a.labels[3]) == 1

    def test_never_worse_than_trivial_partitions(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            g = random_similarity_graph(rng)
            got = codelength(g, cluster(g, seed=int(rng.integers(10_000))))
            one = codelength(g, np.zeros(g.num_nodes, dtype=int))
            singles = codelength(g, np.arange(g.num_nodes))
            assert got <= min(one, singles) + 1e-9

    def test_accepted_codelengths_strictly_decrease(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            g = random_similarity_graph(rng)
            seen = []
            result = cluster(g, seed=2, on_accept=seen.append)
            assert all(b < a for a, b in zip(seen, seen[1:]))
            if seen:
                assert seen[-1] == pytest.approx(codelength(g, result), abs=1e-9)

    def test_matches_brute_force_on_small_graphs(self):
        rng = np.random.default_rng(1234)
        hits, trials = 0, 50
        for trial in range(trials):
            g = random_similarity_graph(rng)
            best, _ = brute_force_optimum(g)
            got = codelength(g, cluster(g, seed=trial))
            assert got <= best * 1.05 + 1e-12
            if got <= best + 1e-9:
                hits += 1
        assert hits >= 0.9 * trials

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        g = random_similarity_graph(rng)
        a = cluster(g, seed=17)
        b = cluster(g, seed=17)
        assert np.array_equal(a.labels, b.labels)


class TestConceptionAssignment:
    def test_from_raw_canonicalizes(self):
        a = ConceptionAssignment.from_raw([5, 5, 2, 7, 2])
        assert np.array_equal(a.labels, [0, 0, 1, 2, 1])
        assert a.num_conceptions == 3

    def test_rejects_non_canonical(self):
        with pytest.raises(ValueError):
            ConceptionAssignment(labels=np.array([1, 0]), num_conceptions=2)
        with pytest.raises(ValueError):
            ConceptionAssignment(labels=np.array([0, 2]), num_conceptions=2)

    def test_members(self):
        a = ConceptionAssignment.from_raw([0, 1, 0, 1])
        assert np.array_equal(a.members(1), [1, 3])

    def test_partition_dump(self, tmp_path):
        a = ConceptionAssignment.from_raw([0, 1, 0])
        path = tmp_path / "part.csv"
        save_partition_csv(a, path)
        assert path.read_text() == "node,conception\n0,0\n1,1\n2,0\n"
