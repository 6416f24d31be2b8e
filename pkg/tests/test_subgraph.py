import numpy as np
import pytest

from d2cl.graph import DirectedGraph, DomainError
from d2cl.subgraph import (ROLE_CONTEXT, ROLE_SOURCE, ROLE_TARGET, InitialGraphEstimate,
                           LassoConvergenceError, column_moments, correlation_matrix,
                           drnl_hash, encode_features, extract_1hop, initial_graph_lasso,
                           initial_graph_pearson, lasso_cd, pearson_partners)
from oracles import drnl_oracle


def test_drnl_hash_values():
    assert drnl_hash([1], [1]).tolist() == [2]
    assert drnl_hash([1], [2]).tolist() == [3]
    assert drnl_hash([2], [2]).tolist() == [5]
    assert drnl_hash([np.inf], [1]).tolist() == [0]


def test_drnl_matches_networkx_on_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(25):
        p = int(rng.integers(4, 25))
        adj = (rng.random((p, p)) < 0.15).astype(np.int8)
        np.fill_diagonal(adj, 0)
        g0 = DirectedGraph(adj)
        i, j = rng.choice(p, 2, replace=False)
        sg = extract_1hop(g0, int(i), int(j))
        assert np.array_equal(sg.drnl, drnl_oracle(sg.adj, sg.center_i, sg.center_j))


def test_extract_small_example():
    # 0 -> 1, 2 -> 0, 3 isolated, 4 -> 1
    g0 = DirectedGraph.from_edges(5, [(0, 1), (2, 0), (4, 1)])
    sg = extract_1hop(g0, 0, 1)
    assert sorted(sg.nodes.tolist()) == [0, 1, 2, 4]
    lab = dict(zip(sg.nodes.tolist(), sg.drnl.tolist()))
    # 2 reaches 0 at distance 1 but 1 only through 0, which is removed
    assert lab == {0: 1, 1: 1, 2: 0, 4: 0}
    roles = dict(zip(sg.nodes.tolist(), sg.role.tolist()))
    assert roles[0] == ROLE_SOURCE and roles[1] == ROLE_TARGET and roles[2] == ROLE_CONTEXT


def test_shared_neighbour_label():
    g0 = DirectedGraph.from_edges(3, [(2, 0), (2, 1)])
    sg = extract_1hop(g0, 0, 1)
    assert dict(zip(sg.nodes.tolist(), sg.drnl.tolist()))[2] == 2


def test_isolated_pair_has_two_nodes():
    sg = extract_1hop(DirectedGraph.empty(4), 1, 3)
    assert sg.n_nodes == 2 and not sg.adj.any()


def test_shuffle_keeps_structure():
    g0 = DirectedGraph.from_edges(6, [(0, 1), (1, 2), (3, 0), (4, 1)])
    a = extract_1hop(g0, 0, 1)
    b = extract_1hop(g0, 0, 1, shuffle_seed=3)
    assert b.nodes[b.center_i] == 0 and b.nodes[b.center_j] == 1
    perm = [a.nodes.tolist().index(v) for v in b.nodes]
    assert np.array_equal(b.adj, a.adj[np.ix_(perm, perm)])
    assert np.array_equal(b.drnl, a.drnl[perm])


def test_same_centres_rejected():
    with pytest.raises(DomainError):
        extract_1hop(DirectedGraph.empty(3), 1, 1)


def test_encode_features_layout():
    X = np.random.default_rng(1).standard_normal((50, 4))
    g0 = DirectedGraph.from_edges(4, [(0, 1), (2, 1)])
    sg = extract_1hop(g0, 0, 1)
    f = encode_features(sg, max_label=10, X=X)
    assert f.shape == (sg.n_nodes, 11 + 3 + 4)
    assert np.all(f[:, :11].sum(axis=1) == 1)
    assert np.allclose(f[:, 14:], column_moments(X)[sg.nodes])


def test_column_moments_against_closed_form():
    x = np.array([1.0, 2.0, 3.0, 10.0])
    m = column_moments(x[:, None])[0]
    z = x - x.mean()
    assert m[0] == pytest.approx(4.0)
    assert m[1] == pytest.approx(np.sqrt(np.mean(z ** 2)))
    assert m[2] == pytest.approx(np.mean(z ** 3) / np.mean(z ** 2) ** 1.5)
    assert m[3] == pytest.approx(np.mean(z ** 4) / np.mean(z ** 2) ** 2 - 3)


def test_correlation_matches_numpy():
    X = np.random.default_rng(2).standard_normal((40, 5))
    R, bad = correlation_matrix(X)
    assert not bad.any()
    assert np.allclose(R, np.corrcoef(X.T))


def test_correlation_zeroes_constant_column():
    X = np.c_[np.random.default_rng(3).standard_normal((20, 2)), np.full(20, 2.0)]
    R, bad = correlation_matrix(X)
    assert bad.tolist() == [False, False, True]
    assert not R[2].any() and not R[:, 2].any()


def test_pearson_budget_and_ties():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((200, 8))
    partners = pearson_partners(X, 3)
    R = np.abs(np.corrcoef(X.T))
    for i in range(8):
        others = [v for v in range(8) if v != i]
        best = sorted(others, key=lambda v: (-R[i, v], v))[:3]
        assert partners[i].tolist() == best
    g = initial_graph_pearson(X, 3).graph
    assert np.array_equal(g.adj, g.adj.T)
    assert np.all(g.adj.sum(axis=1) >= 3)


def test_pearson_tie_prefers_smaller_id():
    x = np.random.default_rng(5).standard_normal(30)
    X = np.c_[x, x, x, np.random.default_rng(6).standard_normal(30)]
    assert pearson_partners(X, 1)[2].tolist() == [0]


def test_pearson_budget_domain():
    with pytest.raises(DomainError):
        pearson_partners(np.zeros((3, 3)), 0)


def test_lasso_orthogonal_design_closed_form():
    c = np.array([0.5, -0.05, 0.2])
    b, _ = lasso_cd(np.eye(3), c, lam=0.1)
    assert np.allclose(b, [0.4, 0.0, 0.1])


def test_lasso_kkt_conditions():
    rng = np.random.default_rng(7)
    Z = rng.standard_normal((100, 6))
    y = Z @ np.array([1.0, 0, -0.5, 0, 0, 0.2]) + 0.3 * rng.standard_normal(100)
    G, c, lam = Z.T @ Z / 100, Z.T @ y / 100, 0.05
    b, _ = lasso_cd(G, c, lam, tol=1e-10)
    grad = c - G @ b
    active = b != 0
    assert np.allclose(grad[active], lam * np.sign(b[active]), atol=1e-6)
    assert np.all(np.abs(grad[~active]) <= lam + 1e-6)


def test_lasso_convergence_error():
    rng = np.random.default_rng(8)
    Z = rng.standard_normal((30, 4))
    with pytest.raises(LassoConvergenceError) as info:
        lasso_cd(Z.T @ Z / 30, Z.T @ rng.standard_normal(30) / 30, 1e-4, tol=0.0,
                 max_sweeps=2, node=3)
    assert info.value.node == 3 and info.value.sweeps == 2


def test_lasso_graph_recovers_strong_chain():
    rng = np.random.default_rng(9)
    a = rng.standard_normal(500)
    b = a + 0.3 * rng.standard_normal(500)
    c = rng.standard_normal(500)
    g = initial_graph_lasso(np.c_[a, b, c], lam=0.1).graph
    assert g.adj[0, 1] and g.adj[1, 0]
    assert not g.adj[2].any() and not g.adj[:, 2].any()


def test_lasso_domain():
    with pytest.raises(DomainError):
        initial_graph_lasso(np.zeros((3, 2)), lam=0.0)


def test_estimate_save_load(tmp_path):
    est = initial_graph_pearson(np.random.default_rng(10).standard_normal((30, 5)), 2)
    est.save(tmp_path / "g0.csv")
    back = InitialGraphEstimate.load(tmp_path / "g0.csv")
    assert back.graph == est.graph and back.method == "pearson"
    assert back.params == {"per_node_budget": 2}
