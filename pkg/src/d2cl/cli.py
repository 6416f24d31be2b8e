"""Command-line runner: simulate, ingest, featurize, train, evaluate, sweep, perturb.

Every command writes into ``--out`` a ``config.json`` with the resolved
settings and a ``manifest.json`` with input and output digests.  Exit codes:
0 success, 2 input error, 3 missing upstream artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .evaluate import (SNR_GRID_PAPER, ExperimentReport, SweepConfig,
                       kendall_scores, pearson_scores, run_cell, run_embedding_perturbation,
                       prepare_cell)
from .graph import (DomainError, KnowledgeSet, n_pairs, pairs_of,
                    random_source_split, read_knowledge, write_knowledge, derive_seed)
from .kde import GridSpec, ImageBank, write_image_record
from .metrics import roc_auc
from .model import (PAPER_CNN, D2CLModel, ModelConfig, PairFeaturizer, TrainConfig, infer_graph,
                    train, write_history, write_predictions)
from .nn.checkpoint import CheckpointError
from .sem import (FAMILIES, derive_knowledge, generate_dataset, load_bundle, read_data_csv,
                  save_bundle, write_data_csv)
from .subgraph import (InitialGraphEstimate, LassoConvergenceError, initial_graph_lasso,
                       initial_graph_pearson)

EXIT_OK, EXIT_INPUT, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
LONG_PRESETS = ("paper-sim",)


_S = SweepConfig()
_M, _T = _S.model, _S.training


class InputError(Exception):
    pass


class MissingArtifact(Exception):
    def __init__(self, path):
        self.path = Path(path)
        super().__init__(f"missing artifact: {self.path}")


# -- configuration ---------------------------------------------------------------

@dataclass
class RunConfig:
    """Flat settings shared by every command; JSON files may set any of them."""

    # data
    p: int = _S.p
    n: int = _S.n
    family: str = "linear"
    snr: float = 10.0
    expected_parents: float = _S.expected_parents
    target: str = "direct"
    train_fraction: float = _S.train_fraction
    # initial graph
    g0_method: str = _S.g0_method
    g0_budget: int = _S.g0_budget
    lasso_lambda: float = _S.lasso_lambda
    # model
    tower: str = "dual"
    cnn_preset: str = "desk"
    grid_resolution: int = _M.grid_resolution
    max_label: int = _M.max_label
    node_moments: bool = _M.node_moments
    dropout: float = _M.dropout
    # training
    epochs: int = _T.epochs
    batch_size: int = _T.batch_size
    neg_ratio: float = _T.neg_ratio
    val_fraction: float = _T.val_fraction
    lr: float = _T.lr
    weight_decay: float = _T.weight_decay
    val_split: str = _T.val_split
    restore_best: bool = _T.restore_best
    flip_augment: bool = _T.flip_augment
    # grids
    families: list = field(default_factory=lambda: list(_S.families))
    snrs: list = field(default_factory=lambda: list(_S.snrs))
    targets: list = field(default_factory=lambda: list(_S.targets))
    methods: list = field(default_factory=lambda: list(_S.methods))
    replicates: int = len(_S.seeds)
    label_rate: float = 0.10
    perturb_kind: str = "embedding"
    seed: int = 0

    @classmethod
    def keys(cls) -> set:
        return {f.name for f in fields(cls)}

    def update(self, values: dict, origin: str) -> "RunConfig":
        unknown = sorted(set(values) - self.keys())
        if unknown:
            raise InputError(f"{origin}: unknown config key {unknown[0]!r}")
        return replace(self, **values)

    def validate(self) -> "RunConfig":
        if self.tower not in ("dual", "cnn", "gnn"):
            raise InputError(f"tower must be dual, cnn or gnn, got {self.tower!r}")
        for fam in [self.family, *self.families]:
            if fam not in FAMILIES:
                raise InputError(f"unknown family {fam!r}")
        if self.cnn_preset not in ("desk", "paper"):
            raise InputError("cnn_preset must be 'desk' or 'paper'")
        if self.g0_method not in ("pearson", "lasso"):
            raise InputError("g0_method must be 'pearson' or 'lasso'")
        return self

    def model_config(self) -> ModelConfig:
        mode = {"dual": "dual", "cnn": "cnn_only", "gnn": "gnn_only"}[self.tower]
        kw = dict(mode=mode, grid_resolution=self.grid_resolution, max_label=self.max_label,
                  node_moments=self.node_moments, dropout=self.dropout)
        if self.cnn_preset == "paper":
            kw["cnn"] = PAPER_CNN
        return ModelConfig(**kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, neg_ratio=self.neg_ratio,
                           val_fraction=self.val_fraction, lr=self.lr,
                           weight_decay=self.weight_decay, seed=self.seed,
                           val_split=self.val_split, restore_best=self.restore_best,
                           flip_augment=self.flip_augment)

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(families=tuple(self.families), snrs=tuple(float(s) for s in self.snrs),
                           targets=tuple(self.targets), methods=tuple(self.methods),
                           seeds=tuple(self.seed + r for r in range(self.replicates)),
                           p=self.p, n=self.n, expected_parents=self.expected_parents,
                           train_fraction=self.train_fraction, g0_method=self.g0_method,
                           g0_budget=self.g0_budget, lasso_lambda=self.lasso_lambda,
                           model=self.model_config(), training=self.train_config())


PRESETS = {
    "desk": {},
    "desk-smoke": {"p": 12, "n": 64, "families": ["linear"], "snrs": [10.0], "replicates": 1,
                   "epochs": 2, "grid_resolution": 8, "methods": ["d2cl", "pearson", "kendall"]},
    "paper-sim": {"p": 1500, "n": 1024, "snrs": list(SNR_GRID_PAPER), "families": list(FAMILIES),
                  "targets": ["direct", "ancestral"], "cnn_preset": "paper",
                  "g0_method": "pearson", "lr": 1e-4, "weight_decay": 1e-4, "restore_best": True,
                  "node_moments": True},
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.preset:
        if args.preset not in PRESETS:
            raise InputError(f"unknown preset {args.preset!r}")
        if args.preset in LONG_PRESETS and not args.allow_long:
            raise InputError(f"preset {args.preset!r} is long-running; pass --allow-long")
        cfg = cfg.update(PRESETS[args.preset], f"preset {args.preset}")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifact(path)
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise InputError(f"{path}: config must be a JSON object")
        cfg = cfg.update(values, str(path))
    overrides = {}
    for key in RunConfig.keys():
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return cfg.update(overrides, "command line").validate()


# -- manifests -----------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def engine_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)      # path -> sha256
    outputs: dict = field(default_factory=dict)     # path relative to out dir -> sha256
    timings: dict = field(default_factory=dict)
    engine: dict = field(default_factory=dict)
    run_id: str = ""

    def finalize(self, out_dir: Path, outputs) -> "RunManifest":
        self.outputs = {str(Path(o).relative_to(out_dir)): file_digest(o) for o in outputs}
        self.engine = {"artifact": engine_version(), "numpy": np.__version__,
                       "python": sys.version.split()[0]}
        key = json.dumps({"command": self.command, "config": self.config, "inputs": self.inputs},
                         sort_keys=True)
        self.run_id = hashlib.sha256(key.encode()).hexdigest()[:16]
        return self

    def write(self, out_dir: Path):
        (out_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


def verify_manifest(out_dir) -> list[str]:
    """Paths whose digest no longer matches the manifest (empty when intact)."""
    out_dir = Path(out_dir)
    path = out_dir / "manifest.json"
    if not path.exists():
        raise MissingArtifact(path)
    man = json.loads(path.read_text())
    bad = []
    for rel, digest in man["outputs"].items():
        f = out_dir / rel
        if not f.exists() or file_digest(f) != digest:
            bad.append(rel)
    return bad


def _check_upstream(path: Path):
    """If ``path`` sits in a run directory with a manifest, its digest must match."""
    man = path.parent / "manifest.json"
    if man.exists():
        outputs = json.loads(man.read_text()).get("outputs", {})
        if path.name in outputs and file_digest(path) != outputs[path.name]:
            raise InputError(f"{path} does not match the digest recorded in {man}")


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(path)
    if path.is_file():
        _check_upstream(path)
    return path


class Run:
    """Output-directory bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, out, force: bool):
        self.command, self.cfg = command, cfg
        self.out = Path(out)
        self.t0 = time.perf_counter()
        self.manifest = RunManifest(command, asdict(cfg))
        self.outputs = []
        self.skip = False
        old = self.out / "manifest.json"
        if old.exists() and not force:
            prev = json.loads(old.read_text())
            if prev.get("command") != command or prev.get("config") != asdict(cfg):
                raise InputError(f"{self.out} already holds a different run; pass --force to overwrite")
            if verify_manifest(self.out):
                raise InputError(f"outputs in {self.out} no longer match its manifest; pass --force to redo")
            self.skip = True
        self.out.mkdir(parents=True, exist_ok=True)

    def input(self, path):
        path = require(path)
        if path.is_file():
            self.manifest.inputs[str(path)] = file_digest(path)
        return path

    def output(self, name) -> Path:
        path = self.out / name
        self.outputs.append(path)
        return path

    def finish(self):
        cfg_path = self.output("config.json")
        cfg_path.write_text(json.dumps(asdict(self.cfg), indent=2, sort_keys=True))
        self.manifest.timings["wall_s"] = round(time.perf_counter() - self.t0, 3)
        self.manifest.finalize(self.out, [o for o in self.outputs if o.is_file()]).write(self.out)
        print(f"{self.command}: wrote {self.out} (run {self.manifest.run_id})")


# -- data loading ------------------------------------------------------------------

def load_data(path) -> tuple[np.ndarray, object]:
    """A simulation bundle directory or a bare data CSV; returns (X, bundle or None)."""
    path = Path(path)
    if path.is_dir():
        require(path / "X.csv")
        _check_upstream(path / "X.csv")
        return None, path
    return read_data_csv(require(path)), None


def _dataset(run: Run, data):
    X, bundle_dir = load_data(data)
    ds = None
    if bundle_dir is not None:
        run.input(bundle_dir / "X.csv")
        ds = load_bundle(bundle_dir)
        X = ds.X
    else:
        run.input(data)
    return X, ds


def _knowledge(run: Run, args, cfg: RunConfig, X, ds) -> KnowledgeSet:
    if args.knowledge:
        return read_knowledge(run.input(args.knowledge), X.shape[1])
    if ds is None:
        raise InputError("--knowledge is required unless --data is a simulation bundle")
    train_src, _ = random_source_split(X.shape[1], cfg.train_fraction, derive_seed(cfg.seed, 5))
    return derive_knowledge(ds, cfg.target, train_src)


def _initial_graph(run: Run, args, cfg: RunConfig, X):
    if getattr(args, "g0", None):
        return InitialGraphEstimate.load(run.input(args.g0))
    if cfg.g0_method == "pearson":
        return initial_graph_pearson(X, cfg.g0_budget)
    return initial_graph_lasso(X, cfg.lasso_lambda)


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig, run: Run):
    ds = generate_dataset(p=cfg.p, n=cfg.n, family=cfg.family, snr=cfg.snr,
                          expected_parents=cfg.expected_parents, seed=cfg.seed)
    save_bundle(ds, run.out)
    for name in ("X.csv", "direct.csv", "ancestral.csv", "meta.json"):
        run.output(name)
    train_src, _ = random_source_split(cfg.p, cfg.train_fraction, derive_seed(cfg.seed, 5))
    write_knowledge(derive_knowledge(ds, cfg.target, train_src), run.output("knowledge.csv"))


def cmd_ingest(args, cfg: RunConfig, run: Run):
    path = run.input(args.data)
    X = read_data_csv(path)
    sd = X.std(axis=0)
    degenerate = np.flatnonzero(~np.isfinite(sd) | (sd <= 1e-12)).tolist()
    report = {"n": int(X.shape[0]), "p": int(X.shape[1]), "missing": int(np.isnan(X).sum()),
              "degenerate_columns": degenerate}
    if args.knowledge:
        ks = read_knowledge(run.input(args.knowledge), X.shape[1])
        i, j = pairs_of(ks.pairs, ks.p)
        excluded = np.isin(i, degenerate) | np.isin(j, degenerate)
        report.update(knowledge_pairs=len(ks), knowledge_positive=int(ks.labels.sum()),
                      knowledge_sources=int(np.unique(i).size), excluded_pairs=int(excluded.sum()))
        write_knowledge(ks.subset(~excluded), run.output("knowledge.csv"))
    write_data_csv(X, run.output("X.csv"))
    run.output("validation.json").write_text(json.dumps(report, indent=2))
    if degenerate:
        print(f"ingest: degenerate columns {degenerate}; their pairs are excluded", file=sys.stderr)


def cmd_featurize(args, cfg: RunConfig, run: Run):
    X, ds = _dataset(run, args.data)
    g0 = _initial_graph(run, args, cfg, X)
    g0.save(run.output("g0.csv"))
    run.output("g0.json")
    if args.images:
        ks = _knowledge(run, args, cfg, X, ds)
        bank = ImageBank(X, GridSpec(cfg.grid_resolution))
        with open(run.output("images.bin"), "wb") as fh:
            for k in ks.pairs:
                i, j = pairs_of(int(k), ks.p)
                if not (bank.degenerate[i] or bank.degenerate[j]):
                    write_image_record(fh, int(k), bank.image(int(i), int(j)))


def cmd_train(args, cfg: RunConfig, run: Run):
    X, ds = _dataset(run, args.data)
    ks = _knowledge(run, args, cfg, X, ds)
    mcfg = cfg.model_config()
    g0 = _initial_graph(run, args, cfg, X) if mcfg.uses_gnn else None
    if g0 is not None:
        g0.save(run.output("g0.csv"))
        run.output("g0.json")
    model = D2CLModel(mcfg, seed=cfg.seed)
    feat = PairFeaturizer(X, g0, mcfg, seed=cfg.seed)
    log = (lambda r: print(f"epoch {r['epoch']:3d} loss {r['loss']:.4f} val_auc {r['val_auc']:.4f} "
                           f"lr {r['lr']:.1e}", file=sys.stderr)) if args.verbose else None
    res = train(model, X, ks, g0, cfg.train_config(), feat, log=log)
    if not all(np.isfinite(r["loss"]) for r in res.history):
        raise FloatingPointError("training loss became non-finite")
    model.save(run.output("model.json"))
    run.output("model.bin")
    write_history(res.history, run.output("history.csv"))
    write_knowledge(ks, run.output("knowledge.csv"))
    write_predictions(infer_graph(model, feat, ks), run.output("predictions.csv"))


def _load_model_dir(model_dir: Path):
    model = D2CLModel.load(require(model_dir / "model.json"))
    g0 = InitialGraphEstimate.load(require(model_dir / "g0.csv")) if model.config.uses_gnn else None
    return model, g0


def cmd_evaluate(args, cfg: RunConfig, run: Run):
    """Re-score a trained model on a bundle and report AUC over the unknown pairs."""
    model_dir = require(args.model)
    model, g0 = _load_model_dir(model_dir)
    X, ds = _dataset(run, args.data)
    if ds is None:
        raise InputError("evaluate needs a simulation bundle (for the ground truth)")
    ks = read_knowledge(run.input(args.knowledge or model_dir / "knowledge.csv"), X.shape[1])
    feat = PairFeaturizer(X, g0, model.config, seed=model.seed)
    inf = infer_graph(model, feat, ks)
    write_predictions(inf, run.output("predictions.csv"))
    truth = (ds.g_direct if cfg.target == "direct" else ds.g_ancestral).adj
    unknown = np.setdiff1d(np.arange(n_pairs(X.shape[1])), ks.pairs)
    i, j = pairs_of(unknown, X.shape[1])
    labels = truth[i, j]
    report = ExperimentReport(meta={"model": str(model_dir), "target": cfg.target})
    base = {"family": ds.family.tag, "snr": ds.snr_target, "target": cfg.target, "seed": cfg.seed}
    rows = [("d2cl", inf.scores[i, j])]
    for method in args.baselines:
        fn = pearson_scores if method == "pearson" else kendall_scores
        rows.append((method, fn(X, unknown)[0]))
    for method, scores in rows:
        roc = roc_auc(scores, labels)
        report.add({**base, "method": method, "auc": roc.auc, "runtime_s": 0.0}, roc)
        print(f"{method:8s} AUC {roc.auc:.4f}")
    report.save(run.out)
    for name in ("report.json", "report.csv"):
        run.output(name)
    run.outputs += sorted((run.out / "roc").glob("*.csv"))


def _cell_job(job):
    scfg, family, snr, target, seed = job
    try:
        rep, _ = run_cell(scfg, family, snr, target, seed)
        return rep, None
    except (DomainError, ArithmeticError, np.linalg.LinAlgError, LassoConvergenceError) as exc:
        return None, {"family": family, "snr": snr, "target": target, "seed": seed, "error": repr(exc)}


def _run_grid(scfg: SweepConfig, workers: int) -> ExperimentReport:
    jobs = [(scfg, f, s, t, seed) for f in scfg.families for s in scfg.snrs
            for t in scfg.targets for seed in scfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    report = ExperimentReport(meta={"config": scfg.to_dict()})
    for rep, fail in results:  # job order, so the report is deterministic
        if fail is not None:
            report.failures.append(fail)
        else:
            report.extend(rep)
            for r in rep.rows:
                print(f"{r['family']:10s} snr={r['snr']:<5g} {r['target']:9s} seed={r['seed']} "
                      f"{r['method']:8s} AUC {r['auc']:.4f}")
    return report


def _save_report(run: Run, report: ExperimentReport):
    report.save(run.out)
    for name in ("report.json", "report.csv"):
        run.output(name)
    run.outputs += sorted((run.out / "roc").glob("*.csv"))
    for f in report.failures:
        print(f"failed cell: {f}", file=sys.stderr)


def cmd_sweep(args, cfg: RunConfig, run: Run):
    _save_report(run, _run_grid(cfg.sweep_config(), args.workers))


def cmd_perturb(args, cfg: RunConfig, run: Run):
    scfg = cfg.sweep_config()
    if cfg.perturb_kind == "label":
        scfg = replace(scfg, label_rate=cfg.label_rate)
        _save_report(run, _run_grid(scfg, args.workers))
        return
    if cfg.perturb_kind != "embedding":
        raise InputError("perturb_kind must be 'label' or 'embedding'")
    report = ExperimentReport(meta={"config": scfg.to_dict()})
    mcfg = replace(scfg.model, mode="dual")
    for family in scfg.families:
        for snr in scfg.snrs:
            for target in scfg.targets:
                for seed in scfg.seeds:
                    art = prepare_cell(scfg, family, snr, target, seed)
                    model = D2CLModel(mcfg, seed=seed)
                    feat = PairFeaturizer(art.dataset.X, art.g0, mcfg, seed=seed)
                    train(model, art.dataset.X, art.knowledge, art.g0,
                          replace(scfg.training, seed=seed), feat)
                    art.model, art.featurizer = model, feat
                    base = {"family": family, "snr": snr, "target": target, "seed": seed}
                    rep = run_embedding_perturbation(art, seed=seed, base=base)
                    report.extend(rep)
                    for r in rep.rows:
                        print(f"{family} snr={snr:g} seed={seed} {r['method']:12s} AUC {r['auc']:.4f}")
    _save_report(run, report)


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "featurize": cmd_featurize,
            "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep, "perturb": cmd_perturb}


# -- argument parsing --------------------------------------------------------------

def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _csv_list(kind):
    return lambda text: [kind(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="JSON file with RunConfig keys")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", default="d2cl-out", help="output directory")
    g.add_argument("--preset", help="desk | desk-smoke | paper-sim")
    g.add_argument("--workers", type=int, default=1, help="parallel sweep cells (1 keeps runs bit-reproducible)")
    g.add_argument("--allow-long", action="store_true", help="permit paper-scale presets")
    g.add_argument("--force", action="store_true", help="overwrite an existing different run")
    g.add_argument("-v", "--verbose", action="store_true")
    s = common.add_argument_group("settings (override the config file)")
    for f in fields(RunConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("int", int):
            s.add_argument(flag, dest=f.name, type=int)
        elif f.type in ("float", float):
            s.add_argument(flag, dest=f.name, type=float)
        elif f.type in ("bool", bool):
            s.add_argument(flag, dest=f.name, type=_bool)
        elif f.type in ("list", list):
            kind = float if f.name == "snrs" else str
            s.add_argument(flag, dest=f.name, type=_csv_list(kind))
        else:
            s.add_argument(flag, dest=f.name)

    parser = argparse.ArgumentParser(prog="d2cl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a simulated dataset bundle")
    p = sub.add_parser("ingest", parents=[common], help="validate external data and knowledge CSVs")
    p.add_argument("--data", required=True)
    p.add_argument("--knowledge")
    p = sub.add_parser("featurize", parents=[common], help="initial graph estimate and causal images")
    p.add_argument("--data", required=True)
    p.add_argument("--knowledge")
    p.add_argument("--g0")
    p.add_argument("--images", action="store_true", help="also write images of the knowledge pairs")
    p = sub.add_parser("train", parents=[common], help="train a model and score every pair")
    p.add_argument("--data", required=True)
    p.add_argument("--knowledge")
    p.add_argument("--g0")
    p = sub.add_parser("evaluate", parents=[common], help="re-score a trained model against ground truth")
    p.add_argument("--model", required=True, help="output directory of a train run")
    p.add_argument("--data", required=True)
    p.add_argument("--knowledge")
    p.add_argument("--baselines", type=_csv_list(str), default=["pearson", "kendall"])
    sub.add_parser("sweep", parents=[common], help="replicated grid over families, SNRs and targets")
    sub.add_parser("perturb", parents=[common], help="label or embedding perturbation experiments")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg, args.out, args.force)
        if run.skip:
            print(f"{args.command}: {run.out} is up to date")
            return EXIT_OK
        COMMANDS[args.command](args, cfg, run)
        run.finish()
        return EXIT_OK
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InputError, DomainError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LassoConvergenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
