import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from d2cl.graph import (DirectedGraph, DomainError, EvalSplit, KnowledgeSet, derive_seed,
                        is_acyclic, linear_index, linear_indices, make_split, n_pairs, pair_of,
                        pairs_from_sources, pairs_of, perturb_labels, random_source_split,
                        read_edge_list, read_knowledge, topological_order, transitive_closure,
                        write_edge_list, write_knowledge)
from oracles import floyd_warshall_reach


def random_dag(p, prob, rng):
    order = rng.permutation(p)
    upper = np.triu(rng.random((p, p)) < prob, k=1)
    adj = np.zeros((p, p), dtype=np.int8)
    adj[np.ix_(order, order)] = upper
    return DirectedGraph(adj)


class TestDirectedGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(DomainError):
            DirectedGraph(np.eye(3, dtype=np.int8))

    def test_rejects_non_binary(self):
        with pytest.raises(DomainError):
            DirectedGraph(np.array([[0, 2], [0, 0]]))

    def test_rejects_non_square(self):
        with pytest.raises(DomainError):
            DirectedGraph(np.zeros((2, 3)))

    def test_adjacency_is_frozen(self):
        g = DirectedGraph.from_edges(3, [(0, 1)])
        with pytest.raises(ValueError):
            g.adj[0, 2] = 1

    def test_parents_children(self):
        g = DirectedGraph.from_edges(4, [(0, 2), (1, 2), (2, 3)])
        assert g.parents(2).tolist() == [0, 1]
        assert g.children(2).tolist() == [3]
        assert g.n_edges == 3

    def test_equality_and_hash(self):
        a = DirectedGraph.from_edges(3, [(0, 1)])
        b = DirectedGraph.from_edges(3, [(0, 1)])
        assert a == b and hash(a) == hash(b)
        assert a != DirectedGraph.empty(3)

    def test_topological_order_and_cycle(self):
        g = DirectedGraph.from_edges(3, [(2, 1), (1, 0)])
        assert topological_order(g).tolist() == [2, 1, 0]
        cyc = DirectedGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)])
        assert not is_acyclic(cyc)
        with pytest.raises(DomainError):
            topological_order(cyc)


class TestPairIndex:
    def test_spec_examples(self):
        assert linear_index(0, 1, 3) == 0
        assert linear_index(2, 1, 3) == 5

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            linear_index(1, 1, 3)
        with pytest.raises(DomainError):
            linear_index(0, 3, 3)
        with pytest.raises(DomainError):
            pair_of(6, 3)

    @given(st.integers(2, 60), st.data())
    def test_roundtrip(self, p, data):
        i = data.draw(st.integers(0, p - 1))
        j = data.draw(st.integers(0, p - 1).filter(lambda v: v != i))
        k = linear_index(i, j, p)
        assert 0 <= k < n_pairs(p)
        assert pair_of(k, p) == (i, j)

    def test_bijection_and_vectorised(self):
        p = 7
        ks = [linear_index(i, j, p) for i in range(p) for j in range(p) if i != j]
        assert ks == list(range(n_pairs(p)))
        i, j = pairs_of(np.arange(n_pairs(p)), p)
        assert np.array_equal(linear_indices(i, j, p), np.arange(n_pairs(p)))

    def test_pairs_from_sources(self):
        ks = pairs_from_sources([2], 4)
        assert [pair_of(int(k), 4) for k in ks] == [(2, 0), (2, 1), (2, 3)]


class TestClosure:
    def test_chain(self):
        g = DirectedGraph.from_edges(4, [(1, 2), (2, 3)])
        assert set(transitive_closure(g).edges()) == {(1, 2), (2, 3), (1, 3)}

    def test_empty(self):
        assert transitive_closure(DirectedGraph.empty(5)) == DirectedGraph.empty(5)

    def test_cyclic_diagonal_cleared(self):
        g = DirectedGraph.from_edges(3, [(0, 1), (1, 0), (1, 2)])
        c = transitive_closure(g)
        assert not np.diagonal(c.adj).any()
        assert set(c.edges()) == {(0, 1), (1, 0), (0, 2), (1, 2)}

    def test_matches_floyd_warshall(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = int(rng.integers(2, 40))
            g = random_dag(p, rng.uniform(0, 0.3), rng)
            assert np.array_equal(transitive_closure(g).adj, floyd_warshall_reach(g.adj))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 2**31 - 1))
    def test_idempotent_on_arbitrary_graphs(self, p, seed):
        rng = np.random.default_rng(seed)
        adj = (rng.random((p, p)) < 0.2).astype(np.int8)
        np.fill_diagonal(adj, 0)
        c = transitive_closure(DirectedGraph(adj))
        assert np.array_equal(c.adj, floyd_warshall_reach(adj))
        assert transitive_closure(c) == c


class TestSplits:
    def test_spec_counts(self):
        g = DirectedGraph.from_edges(4, [(0, 1), (2, 3)])
        s = make_split(g, [0], [2])
        assert len(s.train) == 3 and s.test_pairs.size == 3
        assert set(s.train.sources().tolist()) == {0}
        assert s.train.as_dict()[linear_index(0, 1, 4)] == 1
        assert s.test_labels.tolist() == [0, 0, 1]

    def test_overlap_rejected(self):
        with pytest.raises(DomainError):
            make_split(DirectedGraph.empty(4), [0, 1], [1])

    def test_eval_split_checks_sources(self):
        ks = KnowledgeSet(3, [linear_index(0, 1, 3)], [1])
        with pytest.raises(DomainError):
            EvalSplit(ks, np.array([linear_index(0, 2, 3)]), np.array([0]))

    def test_random_source_split_partition(self):
        tr, te = random_source_split(50, 0.6, seed=3)
        assert tr.size == 30 and te.size == 20
        assert np.intersect1d(tr, te).size == 0
        tr2, te2 = random_source_split(50, 0.6, seed=3, test_fraction=0.1)
        assert np.array_equal(tr, tr2) and te2.size == 5

    def test_derive_seed_streams_differ(self):
        assert derive_seed(0, 1) != derive_seed(0, 2)
        assert derive_seed(0, 1) != derive_seed(1, 1)
        assert derive_seed(4, 5) == derive_seed(4, 5)


class TestKnowledge:
    def test_validation(self):
        with pytest.raises(DomainError):
            KnowledgeSet(3, [0, 0], [1, 0])
        with pytest.raises(DomainError):
            KnowledgeSet(3, [0], [2])
        with pytest.raises(DomainError):
            KnowledgeSet(3, [6], [0])

    def test_perturb_zero_rate_identity(self):
        ks = KnowledgeSet(5, np.arange(20), np.arange(20) % 2)
        assert perturb_labels(ks, 0.0, seed=1) is ks

    def test_perturb_exact_count(self):
        ks = KnowledgeSet(11, np.arange(100), np.zeros(100))
        out = perturb_labels(ks, 0.10, seed=1)
        assert int(out.labels.sum()) == 10
        assert np.array_equal(out.pairs, ks.pairs)

    def test_perturb_full_rate_involution(self):
        ks = KnowledgeSet(5, np.arange(20), np.arange(20) % 2)
        once = perturb_labels(ks, 1.0, seed=7)
        assert np.array_equal(once.labels, 1 - ks.labels)
        assert np.array_equal(perturb_labels(once, 1.0, seed=7).labels, ks.labels)

    def test_perturb_rate_domain(self):
        ks = KnowledgeSet(3, [0], [0])
        with pytest.raises(DomainError):
            perturb_labels(ks, 1.5, 0)


class TestCsv:
    def test_edge_roundtrip(self, tmp_path):
        g = DirectedGraph.from_edges(5, [(0, 3), (4, 1)])
        write_edge_list(g, tmp_path / "g.csv")
        assert read_edge_list(tmp_path / "g.csv", 5) == g

    def test_knowledge_roundtrip(self, tmp_path):
        ks = KnowledgeSet(4, [linear_index(0, 1, 4), linear_index(3, 2, 4)], [1, 0])
        write_knowledge(ks, tmp_path / "k.csv")
        back = read_knowledge(tmp_path / "k.csv", 4)
        assert back.as_dict() == ks.as_dict()

    def test_knowledge_bad_label_reports_row(self, tmp_path):
        path = tmp_path / "k.csv"
        path.write_text("source,target,label\n0,1,1\n1,2,3\n")
        with pytest.raises(DomainError, match=":3:"):
            read_knowledge(path, 4)

    def test_knowledge_column_mismatch(self, tmp_path):
        path = tmp_path / "k.csv"
        path.write_text("source,target,label\n0,1\n")
        with pytest.raises(DomainError, match=":2:"):
            read_knowledge(path, 4)

    def test_knowledge_unknown_variable(self, tmp_path):
        path = tmp_path / "k.csv"
        path.write_text("source,target,label\n0,9,1\n")
        with pytest.raises(DomainError, match="out of range"):
            read_knowledge(path, 4)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("a,b\n0,1\n")
        with pytest.raises(DomainError):
            read_edge_list(path, 3)
