"""Initial graph estimates, 1-hop enclosing subgraphs and DRNL node labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import DirectedGraph, DomainError, read_edge_list, write_edge_list

ROLE_SOURCE, ROLE_TARGET, ROLE_CONTEXT = 0, 1, 2
N_DATA_FEATURES = 4


class LassoConvergenceError(RuntimeError):
    def __init__(self, node, sweeps, max_change):
        self.node, self.sweeps, self.max_change = node, sweeps, max_change
        super().__init__(f"lasso for node {node} did not converge after {sweeps} sweeps "
                         f"(last max coefficient change {max_change:.3g})")


@dataclass(frozen=True)
class InitialGraphEstimate:
    graph: DirectedGraph
    method: str
    params: dict = field(default_factory=dict)

    def save(self, path) -> None:
        """Edge list CSV at ``path`` plus a ``.json`` sidecar with the method."""
        path = Path(path)
        write_edge_list(self.graph, path)
        side = {"method": self.method, "p": self.graph.p, "params": self.params}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "InitialGraphEstimate":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        return cls(read_edge_list(path, side["p"]), side["method"], side.get("params", {}))


def _degenerate_columns(X) -> np.ndarray:
    sd = X.std(axis=0)
    return ~np.isfinite(sd) | (sd <= 1e-12)


def correlation_matrix(X) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations with degenerate columns zeroed; also returns the mask."""
    X = np.asarray(X, dtype=np.float64)
    bad = _degenerate_columns(X)
    Z = X - X.mean(axis=0)
    sd = np.sqrt((Z * Z).sum(axis=0))
    sd[bad] = 1.0
    Z /= sd
    R = Z.T @ Z
    R[bad, :] = 0.0
    R[:, bad] = 0.0
    np.clip(R, -1.0, 1.0, out=R)
    return R, bad


def pearson_partners(X, per_node_budget: int = 5) -> np.ndarray:
    """Each node's ``budget`` partners by descending ``|r|``; ties go to the smaller id.

    Rows for degenerate nodes, and slots beyond the number of candidates,
    are filled with -1.
    """
    if per_node_budget < 1:
        raise DomainError("per_node_budget must be at least 1")
    R, bad = correlation_matrix(X)
    p = R.shape[0]
    out = np.full((p, per_node_budget), -1, dtype=np.int64)
    ids = np.arange(p)
    for i in range(p):
        if bad[i]:
            continue
        cand = ids[(ids != i) & ~bad]
        order = np.lexsort((cand, -np.abs(R[i, cand])))
        chosen = cand[order[:per_node_budget]]
        out[i, :chosen.size] = chosen
    return out


def initial_graph_pearson(X, per_node_budget: int = 5) -> InitialGraphEstimate:
    """Budgeted correlation graph, stored as symmetric directed pairs."""
    partners = pearson_partners(X, per_node_budget)
    p = partners.shape[0]
    adj = np.zeros((p, p), dtype=np.int8)
    rows = np.repeat(np.arange(p), partners.shape[1])
    cols = partners.ravel()
    keep = cols >= 0
    adj[rows[keep], cols[keep]] = 1
    adj = np.maximum(adj, adj.T)
    return InitialGraphEstimate(DirectedGraph(adj), "pearson", {"per_node_budget": per_node_budget})


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_cd(gram: np.ndarray, xty: np.ndarray, lam: float, tol: float = 1e-6,
             max_sweeps: int = 10_000, node=None) -> tuple[np.ndarray, int]:
    """Coordinate descent on ``0.5 b'Gb - b'c + lam * |b|_1``.

    With ``G = Z'Z/n`` and ``c = Z'y/n`` this is the lasso
    ``(1/2n)|y - Zb|^2 + lam |b|_1``.  Stops when no coefficient moves by
    more than ``tol`` during a sweep.
    """
    k = xty.size
    b = np.zeros(k)
    diag = np.diagonal(gram).copy()
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for a in range(k):
            if diag[a] <= 0:
                continue
            old = b[a]
            rho = xty[a] - gram[a] @ b + diag[a] * old
            new = soft_threshold(rho, lam) / diag[a]
            if new != old:
                b[a] = new
                max_change = max(max_change, abs(new - old))
        if max_change <= tol:
            return b, sweep
    raise LassoConvergenceError(node, max_sweeps, max_change)


def initial_graph_lasso(X, lam: float = 0.1, tol: float = 1e-6,
                        max_sweeps: int = 10_000) -> InitialGraphEstimate:
    """Neighbourhood lasso: ``i -> j`` iff ``X_i`` has a nonzero coefficient for ``X_j``."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    bad = _degenerate_columns(X)
    Z = X - X.mean(axis=0)
    sd = Z.std(axis=0)
    sd[bad] = 1.0
    Z /= sd
    Z[:, bad] = 0.0
    G = Z.T @ Z / n
    adj = np.zeros((p, p), dtype=np.int8)
    sweeps = np.zeros(p, dtype=np.int64)
    for j in range(p):
        if bad[j]:
            continue
        others = np.flatnonzero((np.arange(p) != j) & ~bad)
        b, sweeps[j] = lasso_cd(G[np.ix_(others, others)], G[others, j], lam, tol,
                                max_sweeps, node=j)
        adj[others[b != 0], j] = 1
    return InitialGraphEstimate(DirectedGraph(adj), "lasso",
                                {"lambda": lam, "tol": tol, "max_sweeps_used": int(sweeps.max(initial=0))})


# -- enclosing subgraphs -----------------------------------------------------

@dataclass
class EnclosingSubgraph:
    nodes: np.ndarray          # global node ids in (shuffled) local order
    center_i: int              # local position of the source centre
    center_j: int              # local position of the target centre
    adj: np.ndarray            # local directed adjacency
    drnl: np.ndarray | None = None
    role: np.ndarray | None = None
    node_data: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.size


def one_hop_nodes(g0: DirectedGraph, i: int, j: int) -> np.ndarray:
    a = g0.adj
    mask = (a[i] | a[:, i] | a[j] | a[:, j]).astype(bool)
    mask[[i, j]] = True
    return np.flatnonzero(mask)


def extract_1hop(g0: DirectedGraph, i: int, j: int, shuffle_seed=None) -> EnclosingSubgraph:
    """Centres plus everything adjacent to either, with all induced ``g0`` edges."""
    if i == j:
        raise DomainError("extract_1hop needs two distinct centres")
    nodes = one_hop_nodes(g0, i, j)
    if shuffle_seed is not None:
        nodes = np.random.default_rng(shuffle_seed).permutation(nodes)
    pos = {int(v): t for t, v in enumerate(nodes)}
    sg = EnclosingSubgraph(nodes, pos[i], pos[j], g0.adj[np.ix_(nodes, nodes)].copy())
    role = np.full(nodes.size, ROLE_CONTEXT, dtype=np.int64)
    role[sg.center_i] = ROLE_SOURCE
    role[sg.center_j] = ROLE_TARGET
    sg.role = role
    sg.drnl = drnl_labels(sg)
    return sg


def _bfs(und: np.ndarray, start: int, removed: int) -> np.ndarray:
    n = und.shape[0]
    dist = np.full(n, np.inf)
    dist[start] = 0
    alive = np.ones(n, dtype=bool)
    alive[removed] = False
    frontier = np.zeros(n, dtype=bool)
    frontier[start] = True
    d = 0
    while frontier.any():
        d += 1
        nxt = und[frontier].any(axis=0) & alive & np.isinf(dist)
        dist[nxt] = d
        frontier = nxt
    return dist


def drnl_hash(dx, dy) -> np.ndarray:
    """Double-radius label from the two centre distances (0 if either is inf)."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    finite = np.isfinite(dx) & np.isfinite(dy)
    dxf = np.where(finite, dx, 0).astype(np.int64)
    dyf = np.where(finite, dy, 0).astype(np.int64)
    d = dxf + dyf
    half, odd = np.divmod(d, 2)
    lab = 1 + np.minimum(dxf, dyf) + half * (half + odd - 1)
    return np.where(finite, lab, 0)


def drnl_labels(sg: EnclosingSubgraph) -> np.ndarray:
    """DRNL labels over the undirected view of ``sg``.

    Distances to one centre are taken with the other centre removed; both
    centres get label 1.
    """
    und = (sg.adj | sg.adj.T).astype(bool)
    ci, cj = sg.center_i, sg.center_j
    dx = _bfs(und, ci, cj)
    dy = _bfs(und, cj, ci)
    lab = drnl_hash(dx, dy)
    lab[[ci, cj]] = 1
    return lab.astype(np.int64)


def column_moments(X) -> np.ndarray:
    """Per-column ``(mean, std, skewness, excess kurtosis)``, shape ``(p, 4)``."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    Z = X - mu
    var = (Z * Z).mean(axis=0)
    sd = np.sqrt(var)
    safe = np.where(sd > 1e-12, sd, 1.0)
    skew = (Z ** 3).mean(axis=0) / safe ** 3
    kurt = (Z ** 4).mean(axis=0) / safe ** 4 - 3.0
    skew[sd <= 1e-12] = 0.0
    kurt[sd <= 1e-12] = 0.0
    return np.stack([mu, sd, skew, kurt], axis=1)


def encode_features(sg: EnclosingSubgraph, max_label: int = 10, X=None,
                    moments: np.ndarray | None = None) -> np.ndarray:
    """One-hot DRNL (clamped at ``max_label``), one-hot role, optional data moments."""
    drnl = sg.drnl if sg.drnl is not None else drnl_labels(sg)
    n = sg.n_nodes
    lab = np.minimum(drnl, max_label)
    feats = [np.eye(max_label + 1)[lab], np.eye(3)[sg.role]]
    if moments is None and X is not None:
        moments = column_moments(np.asarray(X)[:, sg.nodes])
        feats.append(moments)
    elif moments is not None:
        feats.append(np.asarray(moments)[sg.nodes])
    out = np.concatenate(feats, axis=1)
    assert out.shape[0] == n
    return out
