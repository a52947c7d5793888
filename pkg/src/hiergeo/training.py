"""Optimization over router-cluster batches with Adam, plus grid search
over the default hyperparameter ranges and batched inference."""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import losses, model
from .exceptions import ConfigError, NumericError
from .hosts import Dataset, cluster_by_last_hop
from .losses import LossConfig
from .model import ModelConfig, build_params, forward
from .regions import HierarchyTree

LR_GRID = [2e-2, 1e-2, 2e-3, 1e-3, 2e-4, 1e-4]
ALPHA_BETA_GRID = [round(0.05 * i, 2) for i in range(21)]
HIDDEN_GRID = [16, 32, 48, 64, 128]
LAMBDA_GRID = [0.1, 0.5, 1.0]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 2e-3
    alpha: float = 0.3
    beta: float = 0.3
    hidden_dim: int = 32
    lambda_g: list = field(default_factory=list)
    epochs: int = 50
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ConfigError("alpha and beta must lie in [0, 1]")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    def to_dict(self):
        return {"lr": self.lr, "alpha": self.alpha, "beta": self.beta,
                "hidden_dim": self.hidden_dim, "lambda_g": list(self.lambda_g),
                "epochs": self.epochs, "seed": self.seed, "precision": self.precision}


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(store, state: AdamState, lr):
    """One bias-corrected Adam update. Returns False (step aborted) when
    any gradient is non-finite."""
    if not store.grads_finite():
        warnings.warn("adam_step aborted: non-finite gradients")
        return False
    state.t += 1
    t = state.t
    for name, p in store.params.items():
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1 - ADAM_BETA1) * (g - m)
        v += (1 - ADAM_BETA2) * (g * g - v)
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return True


# ---------------------------------------------------------------------------
# training loop


def _train_clusters(dataset: Dataset, clusters):
    """Cluster batches usable for optimization: >= 2 labeled train hosts."""
    out = []
    for key in sorted(clusters.clusters):
        idx = [i for i in clusters.clusters[key]
               if dataset[i].split == "train" and dataset.labels_of(i) is not None]
        if len(idx) >= 2:
            out.append((key, idx))
    return out


def _slice_accuracy(fused_data, paths, tree):
    """Per-granularity argmax accuracy counts for a batch."""
    hits = np.zeros(tree.levels, dtype=np.intp)
    for g in range(tree.levels):
        sl = fused_data[:, tree.level_slice(g)]
        hits[g] = int((sl.argmax(axis=1) == paths[:, g]).sum())
    return hits


def train(dataset: Dataset, tree: HierarchyTree, cfg: TrainConfig):
    """Epochs of one-cluster steps with leave-one-out targets.

    Returns (ParamStore, history); history rows carry per-epoch mean CE,
    path loss, composite loss and train accuracy per granularity.
    """
    clusters = cluster_by_last_hop(dataset.hosts)
    batches = _train_clusters(dataset, clusters)
    if not batches:
        raise ConfigError("no cluster has >= 2 labeled train hosts")

    input_dim = dataset[0].features.shape[0]
    model_cfg = ModelConfig(input_dim=input_dim, hidden_dim=cfg.hidden_dim,
                            granularity_sizes=tree.granularity_sizes, alpha=cfg.alpha)
    loss_cfg = LossConfig(beta=cfg.beta,
                          lambda_g=list(cfg.lambda_g) if cfg.lambda_g else [])
    params = build_params(model_cfg, cfg.seed)
    params.meta["train_config"] = cfg.to_dict()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)

    cache = {}
    for key, idx in batches:
        X = dataset.feature_matrix(idx)
        paths = np.array([dataset.labels_of(i).per_granularity for i in idx],
                         dtype=np.intp)
        mask = ~np.eye(len(idx), dtype=bool)
        cache[key] = (X, paths, mask)

    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(batches))
        tot_ce = tot_pc = tot_loss = 0.0
        tot_n = 0
        hits = np.zeros(tree.levels, dtype=np.intp)
        for b in order:
            key, idx = batches[b]
            X, paths, mask = cache[key]
            params.zero_grads()
            _, _, fused = forward(params, model_cfg, X, paths, tree, mask=mask)
            loss = losses.composite_loss(fused, paths, tree, loss_cfg)
            loss.backward()
            adam_step(params, state, cfg.lr)
            ce, pc, comp = losses.loss_terms(fused, paths, tree, loss_cfg)
            n = len(idx)
            tot_ce += ce * n
            tot_pc += pc * n
            tot_loss += comp * n
            tot_n += n
            hits += _slice_accuracy(fused.data, paths, tree)
        for p in params.params.values():
            if not np.all(np.isfinite(p.data)):
                raise NumericError(f"non-finite parameters after epoch {epoch}")
        row = {"epoch": epoch, "L_ce": tot_ce / tot_n, "L_pc": tot_pc / tot_n,
               "Loss": tot_loss / tot_n}
        for g in range(tree.levels):
            row[f"acc_g{g + 1}"] = hits[g] / tot_n
        history.append(row)
    return params, history


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]))
        writer.writeheader()
        writer.writerows(history)


# ---------------------------------------------------------------------------
# inference


def predict_indices(params, model_cfg: ModelConfig, dataset: Dataset,
                    tree: HierarchyTree, indices, clusters=None):
    """Fused score rows for the given hosts, each computed within its
    cluster context (train landmarks only, leave-one-out for train hosts).

    Returns {index: fused row or None}; None marks the empty-landmark
    fallback.
    """
    if clusters is None:
        clusters = cluster_by_last_hop(dataset.hosts)
    cluster_of = clusters.cluster_of()
    wanted = set(indices)
    out = {}
    for key in sorted(clusters.clusters):
        members = clusters.clusters[key]
        targets = [i for i in members if i in wanted]
        if not targets:
            continue
        landmarks = [i for i in members
                     if dataset[i].split == "train" and dataset.labels_of(i) is not None]
        if not landmarks:
            for i in targets:
                out[i] = None
            continue
        X_l = dataset.feature_matrix(landmarks)
        paths = np.array([dataset.labels_of(i).per_granularity for i in landmarks],
                         dtype=np.intp)
        X_t = dataset.feature_matrix(targets)
        pos = {h: j for j, h in enumerate(landmarks)}
        mask = np.ones((len(targets), len(landmarks)), dtype=bool)
        for r, i in enumerate(targets):
            if i in pos:
                mask[r, pos[i]] = False  # leave-one-out for train targets
        degenerate = [r for r in range(len(targets)) if not mask[r].any()]
        keep = [r for r in range(len(targets)) if mask[r].any()]
        for r in degenerate:
            out[targets[r]] = None
        if keep:
            _, _, fused = forward(params, model_cfg, X_l, paths, tree,
                                  X_t=X_t[keep], mask=mask[keep])
            for row, r in enumerate(keep):
                out[targets[r]] = fused.data[row].copy()
    for i in indices:
        out.setdefault(i, None)
    return out


def split_accuracy(params, model_cfg, dataset, tree, split="test", fallback=None):
    """Per-granularity argmax accuracy over a split; fallback paths (or
    the modal train path) stand in when no landmarks exist."""
    if fallback is None:
        fallback = model.modal_train_path(dataset, tree)
    indices = dataset.indices(split)
    fused_rows = predict_indices(params, model_cfg, dataset, tree, indices)
    hits = np.zeros(tree.levels)
    total = 0
    lock = dataset.lock_test_labels
    dataset.lock_test_labels = False
    try:
        for i in indices:
            truth = dataset.labels_of(i)
            if truth is None:
                continue
            total += 1
            row = fused_rows[i]
            if row is None:
                pred = fallback.per_granularity
            else:
                pred = [int(np.argmax(row[tree.level_slice(g)]))
                        for g in range(tree.levels)]
            for g in range(tree.levels):
                hits[g] += pred[g] == truth.per_granularity[g]
    finally:
        dataset.lock_test_labels = lock
    if total == 0:
        raise ConfigError(f"no labeled hosts in split {split!r}")
    return hits / total


# ---------------------------------------------------------------------------
# grid search


def default_grids():
    return {"lr": LR_GRID, "alpha": ALPHA_BETA_GRID, "beta": ALPHA_BETA_GRID,
            "hidden_dim": HIDDEN_GRID, "lambda_g": [[l] for l in LAMBDA_GRID]}


_GRID_KEY_ORDER = ["lr", "alpha", "beta", "hidden_dim", "lambda_g", "epochs", "seed"]


def grid_search(dataset: Dataset, tree: HierarchyTree, grids, budget=None,
                base: TrainConfig | None = None, val_fraction=0.1, val_seed=1):
    """Evaluate configs in deterministic grid order; rank by validation
    accuracy at the finest granularity (ties: coarser accuracies, then
    lower lr). Returns a ranked list of (TrainConfig, val accuracies).
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("empty hyperparameter grid")
    for key in grids:
        if key not in _GRID_KEY_ORDER:
            raise ConfigError(f"unknown grid key {key!r}")
    base = base or TrainConfig()

    keys = [k for k in _GRID_KEY_ORDER if k in grids]
    combos = list(itertools.product(*(grids[k] for k in keys)))
    if budget is not None:
        combos = combos[:budget]

    train_idx = dataset.indices("train")
    rng = np.random.default_rng(val_seed)
    n_val = max(1, int(val_fraction * len(train_idx)))
    val_idx = [train_idx[j] for j in rng.permutation(len(train_idx))[:n_val]]
    saved = {i: dataset[i].split for i in val_idx}

    results = []
    try:
        for i in val_idx:
            dataset[i].split = "val"
        for combo in combos:
            overrides = dict(zip(keys, combo))
            cfg = TrainConfig(**{**base.to_dict(), **overrides})
            params, _ = train(dataset, tree, cfg)
            model_cfg = ModelConfig.from_dict(params.meta["config"])
            acc = split_accuracy(params, model_cfg, dataset, tree, split="val")
            results.append((cfg, acc))
    finally:
        for i, split in saved.items():
            dataset[i].split = split

    def rank_key(item):
        cfg, acc = item
        return tuple(-a for a in acc[::-1]) + (cfg.lr,)

    return sorted(results, key=rank_key)
