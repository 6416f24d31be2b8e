"""Benchmark data from random DAGs and additive-noise structural equations.

Each non-root node is ``X_i = f_i(parents) + sigma_i * U_i`` with standard
normal ``U_i``; roots are pure unit-scale noise.  ``sigma_i`` is calibrated
per node so that ``Var(f_i) / sigma_i**2`` hits a target signal-to-noise
ratio.  All node functions of one dataset come from a single family
generator.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import (DirectedGraph, DomainError, derive_seed, KnowledgeSet, pairs_from_sources,
                    read_edge_list, topological_order, transitive_closure,
                    write_edge_list)

FAMILIES = ("linear", "mlp_tanh", "mlp_leaky_relu", "tanh", "leaky_relu", "poly3")

# cubic input saturates here (in pilot standard deviations); unbounded cubics
# compound their tails through deep chains and overflow
POLY_CLIP = 3.0


@dataclass(frozen=True)
class DagSpec:
    p: int
    expected_parents: float
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise DomainError("p must be at least 2")
        if self.expected_parents < 0:
            raise DomainError("expected_parents must be non-negative")


@dataclass(frozen=True)
class FunctionFamily:
    """Family tag plus the hyperparameters of its parameter generator."""

    tag: str = "linear"
    weight_low: float = 0.1
    weight_high: float = 1.0
    hidden: int = 16
    leaky_slope: float = 0.01
    poly_coef: float = 1.0

    def __post_init__(self):
        if self.tag not in FAMILIES:
            raise DomainError(f"unknown function family {self.tag!r}; expected one of {FAMILIES}")

    @property
    def is_mlp(self) -> bool:
        return self.tag.startswith("mlp_")


@dataclass
class NodeFunction:
    """Parameters of one node's structural function.

    The pre-activation is standardised as ``(pre - in_shift) / in_scale``
    before the nonlinearity.  Both are identity at construction and are set
    by :func:`calibrate_noise` for nonlinear families so the nonlinearity sees
    centred unit-scale input.
    """

    w: np.ndarray                       # (k,) or (k, hidden) for MLPs
    b: np.ndarray | None = None         # (hidden,) MLP hidden bias
    w_out: np.ndarray | None = None     # (hidden,) MLP readout
    coef: np.ndarray | None = None      # (3,) cubic coefficients
    in_scale: np.ndarray | float = 1.0
    in_shift: np.ndarray | float = 0.0


@dataclass
class SemModel:
    graph: DirectedGraph
    family: FunctionFamily
    functions: list              # NodeFunction or None for roots
    sigma: np.ndarray            # per-node noise scale; 1 for roots
    degenerate: np.ndarray = None
    snr_target: float | None = None
    snr_achieved: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(self.graph.p, dtype=bool)


@dataclass
class SimDataset:
    X: np.ndarray
    g_direct: DirectedGraph
    g_ancestral: DirectedGraph
    snr_target: float | None
    snr_achieved: np.ndarray
    family: FunctionFamily
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


# -- graph sampling ----------------------------------------------------------

def sample_dag(spec: DagSpec) -> DirectedGraph:
    """Random DAG whose expected in-degree is ``spec.expected_parents``.

    Nodes get a random rank; every forward pair (earlier rank -> later rank)
    becomes an edge independently with probability
    ``2 * expected_parents / (p - 1)``.
    """
    p = spec.p
    prob = 2.0 * spec.expected_parents / (p - 1)
    if prob > 1.0:
        raise DomainError(
            f"expected_parents={spec.expected_parents} exceeds the maximum {(p - 1) / 2} for p={p}")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(p)
    upper = np.triu(rng.random((p, p)) < prob, k=1)
    adj = np.zeros((p, p), dtype=np.int8)
    adj[np.ix_(order, order)] = upper
    return DirectedGraph(adj)


# -- node functions ----------------------------------------------------------

def _signed_uniform(rng, low, high, size):
    mag = rng.uniform(low, high, size=size)
    return mag * rng.choice((-1.0, 1.0), size=size)


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def draw_node_function(family: FunctionFamily, n_parents: int, rng) -> NodeFunction:
    lo, hi = family.weight_low, family.weight_high
    if family.is_mlp:
        return NodeFunction(
            w=_signed_uniform(rng, lo, hi, (n_parents, family.hidden)),
            b=rng.uniform(-1.0, 1.0, size=family.hidden),
            w_out=_signed_uniform(rng, lo, hi, family.hidden),
            in_scale=np.ones(family.hidden),
            in_shift=np.zeros(family.hidden),
        )
    fn = NodeFunction(w=_signed_uniform(rng, lo, hi, n_parents))
    if family.tag == "poly3":
        fn.coef = rng.uniform(-family.poly_coef, family.poly_coef, size=3)
    return fn


def _preactivation(fn: NodeFunction, parent_values) -> np.ndarray:
    x = np.asarray(parent_values, dtype=np.float64)
    k = fn.w.shape[0]
    if x.shape[-1] != k:
        raise DomainError(f"function expects {k} parent values, got {x.shape[-1]}")
    return x @ fn.w


def _apply(family: FunctionFamily, fn: NodeFunction, pre) -> np.ndarray:
    z = (pre - fn.in_shift) / fn.in_scale
    tag = family.tag
    if tag == "linear":
        return z
    if tag == "tanh":
        return np.tanh(z)
    if tag == "leaky_relu":
        return _leaky(z, family.leaky_slope)
    if tag == "poly3":
        c = fn.coef
        z = np.clip(z, -POLY_CLIP, POLY_CLIP)
        return c[0] * z + c[1] * z ** 2 + c[2] * z ** 3
    act = np.tanh if tag == "mlp_tanh" else (lambda h: _leaky(h, family.leaky_slope))
    return act(z + fn.b) @ fn.w_out


def eval_family(family: FunctionFamily, parent_values, params: NodeFunction):
    """Evaluate a node function at one parent vector (or a batch of rows)."""
    out = _apply(family, params, _preactivation(params, parent_values))
    return float(out) if np.ndim(out) == 0 else out


def build_model(graph: DirectedGraph, family: FunctionFamily | str = "linear",
                seed: int = 0) -> SemModel:
    """Draw every non-root node's function from the family generator."""
    if isinstance(family, str):
        family = FunctionFamily(family)
    rng = np.random.default_rng(seed)
    functions = []
    for j in range(graph.p):
        pa = graph.parents(j)
        functions.append(draw_node_function(family, pa.size, rng) if pa.size else None)
    return SemModel(graph, family, functions, np.ones(graph.p), seed=seed)


# -- simulation and calibration ----------------------------------------------

def _forward(model: SemModel, U: np.ndarray, calibrate_snr: float | None = None):
    """Propagate noise ``U`` through the SEM in topological order.

    With ``calibrate_snr`` set, each node's ``in_scale`` (nonlinear families)
    and ``sigma`` are fixed from the running sample before its noise is added.
    Returns the data matrix and the per-node empirical signal and noise
    variances (NaN for roots).
    """
    g = model.graph
    n, p = U.shape
    X = np.zeros((n, p))
    sig_var = np.full(p, np.nan)
    noise_var = np.full(p, np.nan)
    for j in topological_order(g):
        pa = g.parents(j)
        if pa.size == 0:
            X[:, j] = U[:, j]
            continue
        fn = model.functions[j]
        pre = _preactivation(fn, X[:, pa])
        if calibrate_snr is not None and model.family.tag != "linear":
            scale = pre.std(axis=0)
            fn.in_shift = pre.mean(axis=0)
            fn.in_scale = np.where(scale > 1e-12, scale, 1.0)
        signal = _apply(model.family, fn, pre)
        sig_var[j] = signal.var()
        if calibrate_snr is not None:
            if sig_var[j] <= 1e-12:
                model.sigma[j] = 1.0
                model.degenerate[j] = True
            else:
                model.sigma[j] = np.sqrt(sig_var[j] / calibrate_snr)
                model.degenerate[j] = False
        noise = model.sigma[j] * U[:, j]
        noise_var[j] = noise.var()
        X[:, j] = signal + noise
    return X, sig_var, noise_var


def calibrate_noise(model: SemModel, snr: float, pilot_n: int = 4096,
                    seed: int | None = None) -> SemModel:
    """Return a copy of ``model`` whose noise scales realise ``snr`` per node.

    Signal variances are estimated on a pilot simulation of ``pilot_n`` rows
    and ``snr_achieved`` records the empirical signal-to-noise variance ratio
    of that pilot.  Nodes whose signal is constant get ``sigma = 1`` and are
    flagged in ``model.degenerate``.
    """
    if not (np.isfinite(snr) and snr > 0):
        raise DomainError(f"snr must be positive and finite, got {snr}")
    if pilot_n < 2:
        raise DomainError("pilot_n must be at least 2")
    out = SemModel(
        graph=model.graph,
        family=model.family,
        functions=[None if f is None else replace(f) for f in model.functions],
        sigma=np.ones(model.graph.p),
        degenerate=np.zeros(model.graph.p, dtype=bool),
        snr_target=float(snr),
        seed=model.seed,
    )
    seed = model.seed + 7919 if seed is None else seed
    U = np.random.default_rng(seed).standard_normal((pilot_n, model.graph.p))
    _, sig_var, noise_var = _forward(out, U, calibrate_snr=snr)
    out.snr_achieved = sig_var / noise_var
    return out


def simulate(model: SemModel, n: int, seed: int = 0) -> SimDataset:
    """Draw ``n`` i.i.d. rows; bit-identical for a fixed model and seed.

    The dataset carries the model's calibration-time ``snr_achieved``; the
    ratio realised in this particular sample goes to ``meta["snr_realized"]``
    (NaN entries for roots become null).
    """
    if n < 2:
        raise DomainError("n must be at least 2")
    U = np.random.default_rng(seed).standard_normal((n, model.graph.p))
    X, sig_var, noise_var = _forward(model, U)
    realized = sig_var / noise_var
    achieved = realized if model.snr_achieved is None else model.snr_achieved.copy()
    meta = {
        "family": asdict(model.family),
        "snr_target": model.snr_target,
        "model_seed": model.seed,
        "data_seed": seed,
        "n": n,
        "p": model.graph.p,
        "degenerate_nodes": np.flatnonzero(model.degenerate).tolist(),
        "sigma": model.sigma.tolist(),
        "snr_realized": realized,
    }
    return SimDataset(X, model.graph, transitive_closure(model.graph), model.snr_target,
                      achieved, model.family, seed, meta)


def generate_dataset(p: int = 100, n: int = 512, family: str | FunctionFamily = "linear",
                     snr: float = 10.0, expected_parents: float = 2.0, seed: int = 0,
                     pilot_n: int = 4096) -> SimDataset:
    """Sample a DAG, build a calibrated SEM on it and simulate ``n`` rows."""
    g = sample_dag(DagSpec(p, expected_parents, derive_seed(seed, 1)))
    model = calibrate_noise(build_model(g, family, seed=derive_seed(seed, 2)), snr, pilot_n,
                            seed=derive_seed(seed, 3))
    ds = simulate(model, n, seed=derive_seed(seed, 4))
    ds.meta.update(seed=seed, expected_parents=expected_parents, pilot_n=pilot_n)
    return ds


def derive_knowledge(ds: SimDataset, target: str, sources) -> KnowledgeSet:
    """Labels of all ordered pairs with a source in ``sources``."""
    if target == "direct":
        g = ds.g_direct
    elif target == "ancestral":
        g = ds.g_ancestral
    else:
        raise DomainError(f"target must be 'direct' or 'ancestral', got {target!r}")
    return KnowledgeSet.from_graph(g, pairs_from_sources(sources, ds.p))


def target_graph(ds: SimDataset, target: str) -> DirectedGraph:
    if target not in ("direct", "ancestral"):
        raise DomainError(f"target must be 'direct' or 'ancestral', got {target!r}")
    return ds.g_direct if target == "direct" else ds.g_ancestral


# -- bundle I/O --------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [None if (isinstance(x, float) and not np.isfinite(x)) else x for x in v.tolist()]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def write_data_csv(X: np.ndarray, path) -> None:
    p = X.shape[1]
    header = ",".join(f"x{j}" for j in range(p))
    np.savetxt(path, X, delimiter=",", header=header, comments="", fmt="%.17g")


def read_data_csv(path) -> np.ndarray:
    """Read an ``x0..x{p-1}`` data matrix, validating shape row by row."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        p = len(header)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != p:
                raise DomainError(f"{path}:{lineno}: expected {p} columns, got {len(fields)}")
            try:
                rows.append([float(x) if x else np.nan for x in fields])
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric field") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, p)


def save_bundle(ds: SimDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_data_csv(ds.X, out / "X.csv")
    write_edge_list(ds.g_direct, out / "direct.csv")
    write_edge_list(ds.g_ancestral, out / "ancestral.csv")
    meta = dict(ds.meta)
    meta.update(family=asdict(ds.family), snr_target=ds.snr_target,
                snr_achieved=ds.snr_achieved, seed=ds.seed)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable))
    return out


def load_bundle(path) -> SimDataset:
    src = Path(path)
    X = read_data_csv(src / "X.csv")
    meta = json.loads((src / "meta.json").read_text())
    p = X.shape[1]
    g = read_edge_list(src / "direct.csv", p)
    anc = read_edge_list(src / "ancestral.csv", p)
    ach = np.array([np.nan if v is None else v for v in meta.get("snr_achieved", [])], dtype=float)
    return SimDataset(X, g, anc, meta.get("snr_target"), ach,
                      FunctionFamily(**meta["family"]), meta.get("seed", 0), meta)
