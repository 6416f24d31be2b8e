"""Baselines, experiment grids and report writers.

Every cell simulates a dataset, splits sources into known and unknown,
trains a model on the known rows and scores the unknown pairs.  Only
unknown pairs enter the AUC, since known ones are pinned to their labels.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from .graph import DomainError, derive_seed, make_split, pairs_of, perturb_labels, random_source_split
from .metrics import RocResult, auc_score, roc_auc
from .model import (DESK_MODEL, DESK_TRAINING, D2CLModel, EmbeddingPerturbation, ModelConfig,
                    PairFeaturizer, TrainConfig, infer_graph, train)
from .sem import generate_dataset, target_graph
from .subgraph import correlation_matrix, initial_graph_lasso, initial_graph_pearson

SNR_GRID_PAPER = (10, 6, 4, 2, 1, 0.75, 0.5, 0.25, 0.1)
SNR_GRID_DESK = (10, 1, 0.1)
SIGMA_GRID = (1.0, 2.0, 5.0)
CSV_FIELDS = ["family", "snr", "target", "method", "seed", "auc", "runtime_s"]


# -- baselines ---------------------------------------------------------------------

def pearson_scores(X, pairs) -> tuple[np.ndarray, np.ndarray]:
    """``|r(X_i, X_j)|`` per pair, and a flag marking pairs with a degenerate column."""
    X = np.asarray(X, dtype=np.float64)
    R, bad = correlation_matrix(X)
    i, j = pairs_of(np.asarray(pairs), X.shape[1])
    return np.abs(R[i, j]), bad[i] | bad[j]


def kendall_tau_reference(x, y) -> float:
    """Tau-b by counting concordant and discordant pairs, O(n^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    conc = disc = tie_x = tie_y = 0
    for a in range(n - 1):
        dx = np.sign(x[a + 1:] - x[a])
        dy = np.sign(y[a + 1:] - y[a])
        prod = dx * dy
        conc += int((prod > 0).sum())
        disc += int((prod < 0).sum())
        tie_x += int(((dx == 0) & (dy != 0)).sum())
        tie_y += int(((dy == 0) & (dx != 0)).sum())
    denom = np.sqrt(float(conc + disc + tie_x) * float(conc + disc + tie_y))
    return float((conc - disc) / denom) if denom > 0 else 0.0


def kendall_tau_fast(x, y) -> float:
    tau = kendalltau(x, y).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


def kendall_scores(X, pairs, reference: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``|tau(X_i, X_j)|`` per pair (each unordered pair computed once)."""
    X = np.asarray(X, dtype=np.float64)
    bad = X.std(axis=0) <= 1e-12
    i, j = pairs_of(np.asarray(pairs), X.shape[1])
    fn = kendall_tau_reference if reference else kendall_tau_fast
    memo = {}
    out = np.zeros(i.size)
    for t, (a, b) in enumerate(zip(i, j)):
        key = (min(a, b), max(a, b))
        if bad[a] or bad[b]:
            continue
        if key not in memo:
            memo[key] = abs(fn(X[:, key[0]], X[:, key[1]]))
        out[t] = memo[key]
    return out, bad[i] | bad[j]


# -- reports -----------------------------------------------------------------------

@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)       # dicts with CSV_FIELDS plus extras
    curves: dict = field(default_factory=dict)     # cell key -> RocResult
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, row: dict, roc: RocResult | None = None):
        self.rows.append(row)
        if roc is not None:
            key = f"{row['family']}_snr{row['snr']}_{row['target']}_{row['method']}_seed{row['seed']}"
            self.curves[key] = roc

    def extend(self, other: "ExperimentReport"):
        self.rows += other.rows
        self.curves.update(other.curves)
        self.failures += other.failures

    def aucs(self, **where) -> np.ndarray:
        sel = [r["auc"] for r in self.rows if all(r.get(k) == v for k, v in where.items())]
        return np.asarray(sel, dtype=float)

    def summary(self) -> list[dict]:
        """Mean and sample SD of AUC per (family, snr, target, method) cell."""
        groups = {}
        for r in self.rows:
            key = (r["family"], r["snr"], r["target"], r["method"])
            groups.setdefault(key, []).append(r)
        out = []
        for (fam, snr, tgt, meth), rs in groups.items():
            a = np.array([r["auc"] for r in rs], dtype=float)
            out.append({"family": fam, "snr": snr, "target": tgt, "method": meth,
                        "seeds": [r["seed"] for r in rs], "auc_mean": float(np.nanmean(a)),
                        "auc_sd": float(np.nanstd(a, ddof=1)) if a.size > 1 else 0.0,
                        "runtime_s": float(sum(r["runtime_s"] for r in rs))})
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "auc": repr(float(r["auc"])), "runtime_s": f"{r['runtime_s']:.3f}"})

    def write_json(self, path):
        doc = {"meta": self.meta, "rows": self.rows, "summary": self.summary(),
               "failures": self.failures}
        Path(path).write_text(json.dumps(doc, indent=2, default=_json_default))

    def write_roc(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for key, roc in self.curves.items():
            write_roc_csv(roc, out_dir / f"roc_{key}.csv")

    def save(self, out_dir, stem="report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.write_json(out_dir / f"{stem}.json")
        self.write_csv(out_dir / f"{stem}.csv")
        self.write_roc(out_dir / "roc")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_roc_csv(roc: RocResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(roc.fpr, roc.tpr):
            w.writerow([repr(float(f)), repr(float(t))])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["snr"] = float(r["snr"])
        r["seed"] = int(r["seed"])
        r["auc"] = float(r["auc"])
        r["runtime_s"] = float(r["runtime_s"])
    return rows


# -- experiment cells ------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    families: tuple = ("linear", "tanh")
    snrs: tuple = SNR_GRID_DESK
    targets: tuple = ("direct",)
    methods: tuple = ("d2cl", "pearson")
    seeds: tuple = (0, 1, 2, 3, 4)
    p: int = 100
    n: int = 512
    expected_parents: float = 2.0
    train_fraction: float = 0.6
    g0_method: str = "lasso"
    g0_budget: int = 5
    lasso_lambda: float = 0.05
    label_rate: float = 0.0
    model: ModelConfig = DESK_MODEL
    training: TrainConfig = DESK_TRAINING

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CellArtifacts:
    dataset: object
    split: object
    knowledge: object
    g0: object
    model: D2CLModel | None = None
    featurizer: PairFeaturizer | None = None
    inference: object = None
    history: list | None = None


def initial_graph(X, cfg: SweepConfig):
    if cfg.g0_method == "pearson":
        return initial_graph_pearson(X, cfg.g0_budget)
    if cfg.g0_method == "lasso":
        return initial_graph_lasso(X, cfg.lasso_lambda)
    raise DomainError(f"unknown initial graph method {cfg.g0_method!r}")


def prepare_cell(cfg: SweepConfig, family: str, snr: float, target: str, seed: int) -> CellArtifacts:
    ds = generate_dataset(p=cfg.p, n=cfg.n, family=family, snr=snr,
                          expected_parents=cfg.expected_parents, seed=seed)
    train_src, test_src = random_source_split(cfg.p, cfg.train_fraction, derive_seed(seed, 5))
    split = make_split(target_graph(ds, target), train_src, test_src)
    knowledge = split.train
    if cfg.label_rate > 0:
        knowledge = perturb_labels(knowledge, cfg.label_rate, derive_seed(seed, 6))
    return CellArtifacts(ds, split, knowledge, initial_graph(ds.X, cfg))


METHOD_MODES = {"d2cl": "dual", "cnn": "cnn_only", "gnn": "gnn_only"}


def run_cell(cfg: SweepConfig, family: str, snr: float, target: str, seed: int,
             keep: bool = False, log=None) -> tuple[ExperimentReport, CellArtifacts]:
    """One dataset, every requested method; AUC over the unknown pairs only."""
    report = ExperimentReport()
    art = prepare_cell(cfg, family, snr, target, seed)
    split = art.split
    truth = split.test_labels
    base = {"family": family, "snr": snr, "target": target, "seed": seed}
    for method in cfg.methods:
        t0 = time.perf_counter()
        if method == "pearson":
            scores, _ = pearson_scores(art.dataset.X, split.test_pairs)
        elif method == "kendall":
            scores, _ = kendall_scores(art.dataset.X, split.test_pairs)
        elif method in METHOD_MODES:
            mcfg = replace(cfg.model, mode=METHOD_MODES[method])
            model = D2CLModel(mcfg, seed=seed)
            feat = PairFeaturizer(art.dataset.X, art.g0, mcfg, seed=seed)
            tcfg = replace(cfg.training, seed=seed)
            res = train(model, art.dataset.X, art.knowledge, art.g0, tcfg, feat, log=log)
            inf = infer_graph(model, feat, art.knowledge)
            ti, tj = pairs_of(split.test_pairs, cfg.p)
            scores = inf.scores[ti, tj]
            if keep and method == "d2cl":
                art.model, art.featurizer, art.inference, art.history = model, feat, inf, res.history
        else:
            raise DomainError(f"unknown method {method!r}")
        roc = roc_auc(scores, truth)
        report.add({**base, "method": method, "auc": roc.auc,
                    "runtime_s": time.perf_counter() - t0}, roc)
    return report, art


def run_snr_sweep(cfg: SweepConfig, log=None, keep: bool = False):
    """Replicated grid over families x SNRs x targets.  A failing cell is
    recorded in ``failures`` and the sweep moves on."""
    report = ExperimentReport(meta={"config": cfg.to_dict()})
    kept = {}
    for family in cfg.families:
        for snr in cfg.snrs:
            for target in cfg.targets:
                for seed in cfg.seeds:
                    try:
                        cell, art = run_cell(cfg, family, snr, target, seed, keep=keep)
                    except (DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
                        report.failures.append({"family": family, "snr": snr, "target": target,
                                                "seed": seed, "error": repr(exc)})
                        continue
                    report.extend(cell)
                    if keep:
                        kept[(family, snr, target, seed)] = art
                    if log is not None:
                        for r in cell.rows:
                            log(r)
    return (report, kept) if keep else report


def run_label_perturbation(cfg: SweepConfig, rate: float = 0.10, log=None, keep: bool = False):
    """The sweep with ``rate`` of the known labels flipped; evaluation labels stay clean."""
    return run_snr_sweep(replace(cfg, label_rate=rate), log=log, keep=keep)


def perturbation_grid(sigmas=SIGMA_GRID) -> list[tuple[str, float]]:
    return [("zero", 0.0)] + [("gauss", float(s)) for s in sigmas]


def run_embedding_perturbation(art: CellArtifacts, modes=None, seed: int = 0,
                               base: dict | None = None) -> ExperimentReport:
    """AUC over the unknown pairs for every (mode, tower), plus the unperturbed reference."""
    if art.model is None or art.model.mode != "dual":
        raise DomainError("embedding perturbation needs a trained dual-mode model")
    modes = perturbation_grid() if modes is None else modes
    split = art.split
    ti, tj = pairs_of(split.test_pairs, split.train.p)
    base = dict(base or {"family": "", "snr": float("nan"), "target": "", "seed": seed})
    report = ExperimentReport()
    t0 = time.perf_counter()
    ref = infer_graph(art.model, art.featurizer, art.knowledge)
    report.add({**base, "method": "reference", "auc": auc_score(ref.scores[ti, tj], split.test_labels),
                "runtime_s": time.perf_counter() - t0})
    for tower in ("cnn", "gnn"):
        for kind, sigma in modes:
            t0 = time.perf_counter()
            pert = EmbeddingPerturbation(tower, kind, sigma, seed)
            inf = infer_graph(art.model, art.featurizer, art.knowledge, perturb=pert)
            name = f"{tower}:zero" if kind == "zero" else f"{tower}:gauss{sigma:g}"
            report.add({**base, "method": name, "auc": auc_score(inf.scores[ti, tj], split.test_labels),
                        "runtime_s": time.perf_counter() - t0})
    return report
