"""The dual-tower edge classifier: a CNN over causal images, a GNN over
enclosing subgraphs, and a fully connected head over both embeddings."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .graph import DirectedGraph, DomainError, KnowledgeSet, n_pairs, pairs_of
from .kde import DegenerateColumnError, GridSpec, ImageBank
from .metrics import auc_score
from .nn import ops
from .nn.checkpoint import load_arrays, save_arrays
from .nn.tensor import concat, reshape
from .subgraph import InitialGraphEstimate, column_moments, encode_features, extract_1hop

MODES = ("cnn_only", "gnn_only", "dual")


@dataclass(frozen=True)
class CnnTowerConfig:
    stage_blocks: tuple = (1, 1, 1, 1, 1)
    stem_channels: int = 16
    stage_widths: tuple = (4, 8, 16, 32, 32)
    expansion: int = 4
    embed: int = 64

    def __post_init__(self):
        if len(self.stage_blocks) != 5 or len(self.stage_widths) != 5:
            raise DomainError("the CNN tower has exactly five stages")


PAPER_CNN = CnnTowerConfig(stage_blocks=(3, 4, 6, 3, 3), stem_channels=64,
                           stage_widths=(64, 128, 256, 512, 512))


@dataclass(frozen=True)
class GnnTowerConfig:
    hidden: tuple = (32, 32, 32, 1)
    sortpool_k: int = 16
    conv1d_channels: tuple = (16, 32)
    conv1d_kernel: int = 5
    embed: int = 64

    def __post_init__(self):
        if len(self.hidden) != 4:
            raise DomainError("the GNN tower has exactly four graph-conv layers")
        if self.sortpool_k < self.conv1d_kernel:
            raise DomainError("sortpool_k must be at least the second conv1d kernel")


@dataclass(frozen=True)
class FusionConfig:
    hidden: tuple = (128, 32)


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "dual"
    cnn: CnnTowerConfig = CnnTowerConfig()
    gnn: GnnTowerConfig = GnnTowerConfig()
    fusion: FusionConfig = FusionConfig()
    grid_resolution: int = 32
    max_label: int = 10
    node_moments: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must lie in [0, 1)")

    @property
    def uses_cnn(self) -> bool:
        return self.mode in ("cnn_only", "dual")

    @property
    def uses_gnn(self) -> bool:
        return self.mode in ("gnn_only", "dual")

    @property
    def n_node_features(self) -> int:
        return self.max_label + 1 + 3 + (4 if self.node_moments else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        cnn = CnnTowerConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("cnn", {}).items()})
        gnn = GnnTowerConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("gnn", {}).items()})
        fus = FusionConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("fusion", {}).items()})
        return cls(cnn=cnn, gnn=gnn, fusion=fus, **d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    neg_ratio: float = 4.0
    val_fraction: float = 0.1
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_factor: float = 0.2
    patience: int = 15
    min_lr: float = 1e-8
    seed: int = 0
    val_split: str = "source"
    restore_best: bool = True
    flip_augment: bool = True

    def __post_init__(self):
        if self.val_split not in ("source", "pair"):
            raise DomainError("val_split must be 'source' or 'pair'")


# Desk-scale settings: ~37 optimiser steps per epoch and ~120 positive pairs
# call for a larger step and much stronger regularisation than paper scale.
DESK_MODEL = ModelConfig(node_moments=False, dropout=0.5)
DESK_TRAINING = TrainConfig(lr=1e-3, weight_decay=1e-3, restore_best=False)


# -- towers --------------------------------------------------------------------

def stage_strides(resolution: int, n_stages: int = 5) -> list[int]:
    """Stride-2 on the last stages only, so the final map is never below 2x2
    (or 1x1 for tiny grids)."""
    n_down = min(n_stages, max(0, int(np.log2(resolution)) - 1))
    return [2 if s >= n_stages - n_down else 1 for s in range(n_stages)]


class Bottleneck(nn.Module):
    """Pre-activation bottleneck: (BN, PReLU, conv) x 3 with 1x1 / 3x3 / 1x1 kernels."""

    def __init__(self, c_in, width, c_out, stride, rng, dtype=np.float32):
        self.bn1, self.act1 = nn.BatchNorm(c_in, dtype=dtype), nn.PReLU(c_in, dtype=dtype)
        self.conv1 = nn.Conv2d(c_in, width, 1, rng, dtype=dtype)
        self.bn2, self.act2 = nn.BatchNorm(width, dtype=dtype), nn.PReLU(width, dtype=dtype)
        self.conv2 = nn.Conv2d(width, width, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.bn3, self.act3 = nn.BatchNorm(width, dtype=dtype), nn.PReLU(width, dtype=dtype)
        self.conv3 = nn.Conv2d(width, c_out, 1, rng, dtype=dtype)
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = nn.Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)

    def forward(self, x):
        h = self.act1(self.bn1(x))
        skip = x if self.proj is None else self.proj(h)
        h = self.conv1(h)
        h = self.conv2(self.act2(self.bn2(h)))
        h = self.conv3(self.act3(self.bn3(h)))
        return h + skip


class CnnTower(nn.Module):
    def __init__(self, cfg: CnnTowerConfig, resolution: int, rng, dtype=np.float32):
        self.stem = nn.Conv2d(3, cfg.stem_channels, 3, rng, padding=1, dtype=dtype)
        blocks, c = [], cfg.stem_channels
        for n_blocks, width, stride in zip(cfg.stage_blocks, cfg.stage_widths, stage_strides(resolution)):
            for b in range(n_blocks):
                c_out = width * cfg.expansion
                blocks.append(Bottleneck(c, width, c_out, stride if b == 0 else 1, rng, dtype))
                c = c_out
        self.blocks = blocks
        self.bn, self.act = nn.BatchNorm(c, dtype=dtype), nn.PReLU(c, dtype=dtype)
        self.fc = nn.Linear(c, cfg.embed, rng, dtype=dtype)
        self.act_out = nn.PReLU(cfg.embed, dtype=dtype)
        self.resolution = resolution

    def forward(self, x):
        if x.ndim != 4 or x.shape[1:] != (3, self.resolution, self.resolution):
            raise ops.ShapeError(f"CNN tower expects (B, 3, {self.resolution}, {self.resolution}), got {x.shape}")
        h = self.stem(x)
        for blk in self.blocks:
            h = blk(h)
        h = nn.global_avg_pool2d(self.act(self.bn(h)))
        return self.act_out(self.fc(h))


class GnnTower(nn.Module):
    def __init__(self, cfg: GnnTowerConfig, n_features: int, rng, dtype=np.float32):
        widths = (n_features,) + tuple(cfg.hidden)
        self.convs = [nn.GraphConv(a, b, rng, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        total = int(sum(cfg.hidden))
        c1, c2 = cfg.conv1d_channels
        # one kernel application per sorted node row
        self.conv1 = nn.Conv1d(1, c1, total, rng, stride=total, dtype=dtype)
        self.act1 = nn.PReLU(c1, dtype=dtype)
        self.conv2 = nn.Conv1d(c1, c2, cfg.conv1d_kernel, rng, dtype=dtype)
        self.act2 = nn.PReLU(c2, dtype=dtype)
        self.fc = nn.Linear(c2 * (cfg.sortpool_k - cfg.conv1d_kernel + 1), cfg.embed, rng, dtype=dtype)
        self.act_out = nn.PReLU(cfg.embed, dtype=dtype)
        self.k = cfg.sortpool_k
        self.total = total

    def forward(self, feats, a_norm, mask):
        h, outs = feats, []
        for conv in self.convs:
            h = conv(h, a_norm)
            outs.append(h)
        h = concat(outs, axis=-1)
        h = ops.sort_pool(h, self.k, mask)
        B = h.shape[0]
        h = reshape(h, (B, 1, self.k * self.total))
        h = self.act1(self.conv1(h))
        h = self.act2(self.conv2(h))
        h = reshape(h, (B, -1))
        return self.act_out(self.fc(h))


class FusionHead(nn.Module):
    def __init__(self, cfg: FusionConfig, n_in: int, rng, dtype=np.float32):
        widths = (n_in,) + tuple(cfg.hidden)
        self.layers = [nn.Linear(a, b, rng, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.acts = [nn.PReLU(b, dtype=dtype) for b in widths[1:]]
        self.out = nn.Linear(widths[-1], 1, rng, dtype=dtype)

    def forward(self, h, rate: float = 0.0, rng=None):
        for lin, act in zip(self.layers, self.acts):
            h = ops.dropout(h, rate, rng, self.training)
            h = act(lin(h))
        return self.out(ops.dropout(h, rate, rng, self.training))


@dataclass(frozen=True)
class EmbeddingPerturbation:
    """Inference-time corruption of one tower's embedding at the fusion input."""

    tower: str                 # "cnn" or "gnn"
    kind: str = "zero"         # "zero" or "gauss"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tower not in ("cnn", "gnn"):
            raise DomainError("tower must be 'cnn' or 'gnn'")
        if self.kind not in ("zero", "gauss"):
            raise DomainError("kind must be 'zero' or 'gauss'")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")

    def apply(self, emb: np.ndarray, rng) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(emb)
        if self.sigma == 0:
            return emb
        return emb + (self.sigma * rng.standard_normal(emb.shape)).astype(emb.dtype)


class D2CLModel(nn.Module):
    """Both towers, the fusion head, and the optimiser / schedule state."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.config = config
        self.mode = config.mode
        self.seed = seed
        self.cnn = CnnTower(config.cnn, config.grid_resolution, rng, dtype) if config.uses_cnn else None
        self.gnn = GnnTower(config.gnn, config.n_node_features, rng, dtype) if config.uses_gnn else None
        width = (config.cnn.embed if config.uses_cnn else 0) + (config.gnn.embed if config.uses_gnn else 0)
        self.fusion = FusionHead(config.fusion, width, rng, dtype)
        self.optimizer = None
        self.schedule = None
        self.epoch = 0
        self._drop_rng = np.random.default_rng([seed, 7])

    def embeddings(self, images=None, graphs=None) -> list:
        out = []
        if self.cnn is not None:
            if images is None:
                raise DomainError("this model needs causal images")
            out.append(self.cnn(nn.Tensor(images)))
        if self.gnn is not None:
            if graphs is None:
                raise DomainError("this model needs subgraph batches")
            feats, a_norm, mask = graphs
            out.append(self.gnn(nn.Tensor(feats), a_norm, mask))
        return out

    def forward(self, images=None, graphs=None, perturb: EmbeddingPerturbation | None = None,
                rng=None):
        embs = self.embeddings(images, graphs)
        if perturb is not None:
            if self.mode != "dual":
                raise DomainError("embedding perturbation needs a dual-mode model")
            slot = 0 if perturb.tower == "cnn" else 1
            rng = rng if rng is not None else np.random.default_rng(perturb.seed)
            embs[slot] = nn.Tensor(perturb.apply(embs[slot].data, rng))
        h = embs[0] if len(embs) == 1 else concat(embs, axis=1)
        return reshape(self.fusion(h, self.config.dropout, self._drop_rng), (-1,))

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {f"param:{k}": v.data for k, v in self.named_parameters()}
        arrays.update({f"buffer:{k}": v for k, v in self.named_buffers()})
        if self.optimizer is not None:
            for (k, _), m, v in zip(self.named_parameters(), self.optimizer.state.m, self.optimizer.state.v):
                arrays[f"adam_m:{k}"] = m
                arrays[f"adam_v:{k}"] = v
        return arrays

    def save(self, path) -> None:
        extra = {"model_config": self.config.to_dict(), "seed": self.seed, "epoch": self.epoch}
        if self.optimizer is not None:
            extra["adam"] = {"t": self.optimizer.state.t, "lr": self.optimizer.lr,
                             "betas": list(self.optimizer.betas), "eps": self.optimizer.eps,
                             "weight_decay": self.optimizer.weight_decay}
        if self.schedule is not None:
            s = self.schedule
            extra["schedule"] = {"lr": s.lr, "factor": s.factor, "patience": s.patience,
                                 "threshold": s.threshold, "min_lr": s.min_lr,
                                 "best": None if not np.isfinite(s.best) else s.best,
                                 "bad_epochs": s.bad_epochs, "history": list(s.history)}
        save_arrays(path, self.state_arrays(), extra)

    @classmethod
    def load(cls, path) -> "D2CLModel":
        arrays, extra = load_arrays(path)
        model = cls(ModelConfig.from_dict(extra["model_config"]), seed=extra.get("seed", 0))
        params = dict(model.named_parameters())
        for name, p in params.items():
            p.data = arrays[f"param:{name}"].astype(p.data.dtype)
        for m_name, _ in list(model.named_buffers()):
            _set_buffer(model, m_name, arrays[f"buffer:{m_name}"])
        model.epoch = extra.get("epoch", 0)
        if "adam" in extra:
            a = extra["adam"]
            opt = nn.Adam(params.values(), a["lr"], tuple(a["betas"]), a["eps"], a["weight_decay"])
            opt.state.t = a["t"]
            opt.state.m = [arrays[f"adam_m:{k}"] for k in params]
            opt.state.v = [arrays[f"adam_v:{k}"] for k in params]
            model.optimizer = opt
        if "schedule" in extra:
            s = dict(extra["schedule"])
            s["best"] = -np.inf if s["best"] is None else s["best"]
            model.schedule = nn.PlateauSchedule(**s)
        return model


def _set_buffer(module, dotted: str, value):
    parts = dotted.split(".")
    obj = module
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    old = getattr(obj, parts[-1])
    old[...] = value.astype(old.dtype)


# -- featurisation -------------------------------------------------------------

def _signed_log1p(x):
    return np.sign(x) * np.log1p(np.abs(x))


def _node_moment_features(X) -> np.ndarray:
    """Column moments, compressed with a signed log and z-scored across nodes."""
    m = _signed_log1p(column_moments(X))
    sd = m.std(axis=0)
    return (m - m.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)


class SubgraphBank:
    """Encoded 1-hop subgraphs per ordered pair, built lazily and cached.

    Each pair's node order is shuffled with its own seed, so results do not
    depend on the order in which pairs are requested.
    """

    def __init__(self, X, g0: DirectedGraph, max_label: int = 10, node_moments: bool = True,
                 seed: int = 0):
        self.g0 = g0
        self.max_label = max_label
        self.seed = seed
        self.moments = _node_moment_features(X) if node_moments else None
        self._cache = {}

    def get(self, i: int, j: int):
        key = (int(i), int(j))
        hit = self._cache.get(key)
        if hit is None:
            sg = extract_1hop(self.g0, key[0], key[1], shuffle_seed=(self.seed, key[0], key[1]))
            feats = encode_features(sg, self.max_label, moments=self.moments).astype(np.float32)
            hit = (feats, sg.adj)
            self._cache[key] = hit
        return hit

    def batch(self, i, j):
        """Padded ``(features, normalised adjacency, mask)`` for arrays of pairs."""
        items = [self.get(a, b) for a, b in zip(i, j)]
        N = max(f.shape[0] for f, _ in items)
        F = items[0][0].shape[1]
        B = len(items)
        feats = np.zeros((B, N, F), dtype=np.float32)
        adj = np.zeros((B, N, N), dtype=np.float32)
        mask = np.zeros((B, N), dtype=bool)
        for b, (f, a) in enumerate(items):
            n = f.shape[0]
            feats[b, :n] = f
            adj[b, :n, :n] = a
            mask[b, :n] = True
        return feats, ops.normalized_adjacency(adj, mask).astype(np.float32), mask


class PairFeaturizer:
    """Builds the inputs a given model mode needs for batches of pairs."""

    def __init__(self, X, g0, config: ModelConfig, seed: int = 0):
        X = np.asarray(X, dtype=np.float64)
        self.p = X.shape[1]
        if isinstance(g0, InitialGraphEstimate):
            g0 = g0.graph
        self.images = ImageBank(X, GridSpec(config.grid_resolution)) if config.uses_cnn else None
        self.graphs = None
        if config.uses_gnn:
            if g0 is None:
                raise DomainError("GNN tower needs an initial graph estimate")
            self.graphs = SubgraphBank(X, g0, config.max_label, config.node_moments, seed)

    def usable(self, i, j) -> np.ndarray:
        """False for pairs touching a degenerate column (no causal image)."""
        i, j = np.asarray(i), np.asarray(j)
        if self.images is None:
            return np.ones(i.shape, dtype=bool)
        return ~(self.images.degenerate[i] | self.images.degenerate[j])

    def batch(self, i, j):
        imgs = self.images.network_input(i, j) if self.images is not None else None
        graphs = self.graphs.batch(i, j) if self.graphs is not None else None
        return imgs, graphs


def predict_logits(model: D2CLModel, feat: PairFeaturizer, pairs, batch_size: int = 32,
                   perturb: EmbeddingPerturbation | None = None) -> np.ndarray:
    """Eval-mode logits for linear pair indices, in input order."""
    pairs = np.asarray(pairs, dtype=np.int64)
    i, j = pairs_of(pairs, feat.p)
    if not feat.usable(i, j).all():
        bad = pairs[~feat.usable(i, j)][0]
        raise DegenerateColumnError(None, f"pair {bad} involves a degenerate column")
    out = np.zeros(pairs.size, dtype=np.float64)
    was_training = model.training
    model.eval()
    rng = np.random.default_rng(perturb.seed) if perturb is not None else None
    with nn.no_grad():
        for s in range(0, pairs.size, batch_size):
            sl = slice(s, s + batch_size)
            imgs, graphs = feat.batch(i[sl], j[sl])
            out[sl] = model(imgs, graphs, perturb, rng).data
    model.train(was_training)
    return out


def predict_pair(model: D2CLModel, feat: PairFeaturizer, k: int) -> float:
    return float(predict_logits(model, feat, [k])[0])


def sigmoid_scores(logits) -> np.ndarray:
    """Probabilities kept strictly inside (0, 1)."""
    s = nn.tensor.sigmoid_np(np.asarray(logits, dtype=np.float64))
    return np.clip(s, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    val_pairs: np.ndarray | None = None
    skipped: list = field(default_factory=list)
    runtime_s: float = 0.0
    best_epoch: int | None = None


def _split_validation(labels, fraction, rng):
    """Stratified hold-out indices; empty when a class is too small to share."""
    if fraction <= 0:
        return np.zeros(0, dtype=np.int64)
    val = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        n_val = int(round(fraction * idx.size))
        if idx.size < 2 or n_val < 1:
            return np.zeros(0, dtype=np.int64)
        val.append(rng.permutation(idx)[:n_val])
    return np.sort(np.concatenate(val))


def _split_validation_sources(sources, labels, fraction, rng):
    """Hold out every pair of a random ``fraction`` of the known sources.

    Mirrors the evaluation split, where held-out sources never appear in
    training.  Falls back to the stratified pair split when the chosen
    sources miss a class or would leave training without one.
    """
    if fraction <= 0:
        return np.zeros(0, dtype=np.int64)
    uniq = np.unique(sources)
    n_val = int(round(fraction * uniq.size))
    if 1 <= n_val < uniq.size:
        held = rng.permutation(uniq)[:n_val]
        val = np.flatnonzero(np.isin(sources, held))
        rest = np.setdiff1d(np.arange(labels.size), val)
        if np.unique(labels[val]).size == 2 and np.unique(labels[rest]).size == 2:
            return val
    return _split_validation(labels, fraction, rng)


def flip_images(images: np.ndarray, rng) -> np.ndarray:
    """Randomly mirror the density channel along either axis, per sample.

    Mirroring an axis is the image of the negated variable on the negated
    grid, and negating a variable leaves the causal graph unchanged.
    """
    out = images.copy()
    flip_x = rng.random(images.shape[0]) < 0.5
    flip_y = rng.random(images.shape[0]) < 0.5
    out[flip_x, 0] = out[flip_x, 0, :, ::-1]
    out[flip_y, 0] = out[flip_y, 0, ::-1, :]
    return out


def _minibatches(order, size):
    chunks = [order[s:s + size] for s in range(0, order.size, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        # batch norm needs two samples
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train(model: D2CLModel, X, knowledge: KnowledgeSet, g0, config: TrainConfig = TrainConfig(),
          featurizer: PairFeaturizer | None = None, log=None) -> TrainResult:
    """Fit ``model`` on the labelled pairs of ``knowledge``.

    Each epoch keeps every training positive and a fresh sample of at most
    ``neg_ratio`` negatives per positive.  A stratified ``val_fraction`` of
    the knowledge set is held out; its AUC drives the plateau schedule.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    feat = featurizer or PairFeaturizer(X, g0, model.config, seed=config.seed)
    pairs = np.asarray(knowledge.pairs, dtype=np.int64)
    labels = np.asarray(knowledge.labels, dtype=np.int64)
    i_all, j_all = pairs_of(pairs, knowledge.p)
    ok = feat.usable(i_all, j_all)
    result = TrainResult(skipped=[(int(k), "degenerate column") for k in pairs[~ok]])
    pairs, labels = pairs[ok], labels[ok]

    if config.val_split == "source":
        val_idx = _split_validation_sources(pairs_of(pairs, knowledge.p)[0], labels,
                                            config.val_fraction, rng)
    else:
        val_idx = _split_validation(labels, config.val_fraction, rng)
    train_mask = np.ones(pairs.size, dtype=bool)
    train_mask[val_idx] = False
    pos = pairs[train_mask & (labels == 1)]
    neg = pairs[train_mask & (labels == 0)]
    n_neg = min(neg.size, int(np.ceil(config.neg_ratio * pos.size)))
    if pos.size == 0 or n_neg == 0:
        raise DomainError("training needs both classes after negative balancing")
    if pos.size + n_neg < 2:
        raise DomainError("training needs at least two labelled pairs")
    val_pairs, val_labels = pairs[val_idx], labels[val_idx]
    result.val_pairs = val_pairs

    if model.optimizer is None:
        model.optimizer = nn.Adam(model.parameters(), config.lr, weight_decay=config.weight_decay)
    if model.schedule is None:
        model.schedule = nn.PlateauSchedule(config.lr, config.lr_factor, config.patience,
                                            min_lr=config.min_lr)
    opt, sched = model.optimizer, model.schedule
    best_auc, best_state = -np.inf, None
    for _ in range(config.epochs):
        model.train()
        lr_used = opt.lr
        ep_pairs = np.concatenate([pos, rng.choice(neg, n_neg, replace=False)])
        ep_labels = np.r_[np.ones(pos.size), np.zeros(n_neg)]
        order = rng.permutation(ep_pairs.size)
        losses, weights = [], []
        for idx in _minibatches(order, config.batch_size):
            bi, bj = pairs_of(ep_pairs[idx], knowledge.p)
            imgs, graphs = feat.batch(bi, bj)
            if config.flip_augment and imgs is not None:
                imgs = flip_images(imgs, rng)
            loss = ops.bce_with_logits(model(imgs, graphs), ep_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            weights.append(idx.size)
        val_auc = float("nan")
        if val_pairs.size:
            val_auc = auc_score(predict_logits(model, feat, val_pairs), val_labels)
            if config.restore_best and val_auc > best_auc:
                best_auc = val_auc
                best_state = _snapshot(model)
        opt.lr = nn.plateau_update(sched, val_auc)
        model.epoch += 1
        rec = {"epoch": model.epoch, "loss": float(np.average(losses, weights=weights)),
               "val_auc": val_auc, "lr": lr_used}
        result.history.append(rec)
        if log is not None:
            log(rec)
    if best_state is not None:
        _restore(model, best_state)
        result.best_epoch = best_state["epoch"]
    model.eval()
    result.runtime_s = time.perf_counter() - t0
    return result


def _snapshot(model: D2CLModel) -> dict:
    return {"epoch": model.epoch + 1,
            "params": [p.data.copy() for p in model.parameters()],
            "buffers": {k: v.copy() for k, v in model.named_buffers()}}


def _restore(model: D2CLModel, state: dict) -> None:
    """Put back weights and batch-norm statistics; optimiser state is left alone."""
    for p, saved in zip(model.parameters(), state["params"]):
        p.data[...] = saved
    for k, v in state["buffers"].items():
        _set_buffer(model, k, v)


# -- inference -----------------------------------------------------------------

@dataclass
class GraphInference:
    scores: np.ndarray          # (p, p); known pairs carry their label
    known: np.ndarray           # (p, p) bool
    skipped: list

    def binary(self, threshold: float = 0.5) -> DirectedGraph:
        adj = (self.scores >= threshold).astype(np.int8)
        np.fill_diagonal(adj, 0)
        return DirectedGraph(adj)


def infer_graph(model: D2CLModel, feat: PairFeaturizer, knowledge: KnowledgeSet,
                perturb: EmbeddingPerturbation | None = None, batch_size: int = 32) -> GraphInference:
    """Scores for every ordered pair; pairs in the knowledge set keep their label.

    Pairs touching a degenerate column get 0.5 and are listed in ``skipped``.
    """
    p = feat.p
    scores = np.zeros((p, p))
    known = np.zeros((p, p), dtype=bool)
    all_k = np.arange(n_pairs(p))
    is_known = np.zeros(all_k.size, dtype=bool)
    is_known[knowledge.pairs] = True
    unknown = all_k[~is_known]
    ui, uj = pairs_of(unknown, p)
    ok = feat.usable(ui, uj)
    skipped = [(int(k), "degenerate column") for k in unknown[~ok]]
    if ok.any():
        scores[ui[ok], uj[ok]] = sigmoid_scores(predict_logits(model, feat, unknown[ok], batch_size, perturb))
    scores[ui[~ok], uj[~ok]] = 0.5
    ki, kj = pairs_of(knowledge.pairs, p)
    scores[ki, kj] = knowledge.labels.astype(np.float64)
    known[ki, kj] = True
    return GraphInference(scores, known, skipped)


# -- CSV output -----------------------------------------------------------------

def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_auc", "lr"])
        for r in history:
            w.writerow([r["epoch"], repr(float(r["loss"])), repr(float(r["val_auc"])), repr(float(r["lr"]))])


def write_predictions(inf: GraphInference, path) -> None:
    p = inf.scores.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "score", "known"])
        for i in range(p):
            for j in range(p):
                if i != j:
                    w.writerow([i, j, repr(float(inf.scores[i, j])), int(inf.known[i, j])])


def read_predictions(path, p: int) -> GraphInference:
    scores = np.zeros((p, p))
    known = np.zeros((p, p), dtype=bool)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != ["source", "target", "score", "known"]:
            raise DomainError(f"{path}: bad predictions header")
        for row in r:
            i, j = int(row[0]), int(row[1])
            scores[i, j] = float(row[2])
            known[i, j] = row[3] == "1"
    return GraphInference(scores, known, [])


def with_mode(config: ModelConfig, mode: str) -> ModelConfig:
    return replace(config, mode=mode)
