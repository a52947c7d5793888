"""Training losses: per-granularity cross-entropy over fused score
slices, the path-softmax probabilistic classification loss, and their
beta-weighted composite.

The probabilistic loss treats the hierarchy-consistent label
configurations as exactly the root-to-leaf paths: the probability of a
path is proportional to exp(sum of its region scores), normalized by a
partition function computed bottom-up over the tree in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, SchemaError
from .regions import HierarchyTree


@dataclass
class LossConfig:
    beta: float = 0.3
    lambda_g: list = field(default_factory=list)  # per-granularity CE weights

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta {self.beta} outside [0, 1]")
        if any(l <= 0 for l in self.lambda_g):
            raise ConfigError(f"lambda_g must be positive: {self.lambda_g}")

    def weights(self, levels):
        if not self.lambda_g:
            return [1.0] * levels
        if len(self.lambda_g) != levels:
            raise ConfigError(
                f"lambda_g has {len(self.lambda_g)} entries for {levels} granularities")
        return list(self.lambda_g)


def _as_paths(labels, tree: HierarchyTree):
    """Accept LabelVector, a path list, or an (n, G) array of paths."""
    if hasattr(labels, "per_granularity"):
        paths = np.asarray([labels.per_granularity], dtype=np.intp)
    else:
        paths = np.asarray(labels, dtype=np.intp)
        if paths.ndim == 1:
            paths = paths.reshape(1, -1)
    if paths.shape[1] != tree.levels:
        raise SchemaError(f"label paths have {paths.shape[1]} levels, tree has {tree.levels}")
    return paths


def ce_slice(fused: Tensor, g, true_ids, tree: HierarchyTree) -> Tensor:
    """-log softmax of granularity g's slice at the true ids -> (n, 1)."""
    lo, hi = tree.level_slice(g).start, tree.level_slice(g).stop
    ids = np.asarray(true_ids, dtype=np.intp).reshape(-1)
    if (ids < 0).any() or (ids >= hi - lo).any():
        raise SchemaError(f"granularity {g + 1}: label id out of range [0, {hi - lo})")
    sl = ad.slice_cols(fused, lo, hi)
    return ad.add(ad.logsumexp_rows(sl), ad.scale(ad.gather_cols(sl, ids), -1.0))


def hierarchical_ce(fused: Tensor, labels, tree: HierarchyTree, lambda_g=None) -> Tensor:
    """Weighted sum of per-granularity cross-entropies -> (n, 1)."""
    paths = _as_paths(labels, tree)
    weights = lambda_g if lambda_g is not None else [1.0] * tree.levels
    total = None
    for g in range(tree.levels):
        term = ad.scale(ce_slice(fused, g, paths[:, g], tree), float(weights[g]))
        total = term if total is None else ad.add(total, term)
    return total


def path_partition(fused: Tensor, tree: HierarchyTree) -> Tensor:
    """log of the sum over root-to-leaf paths of exp(path score), per row.

    Bottom-up dynamic program in log space with per-subtree max shifts;
    the backward pass scatters path marginals (one O(M) sweep per row).
    """
    data = fused.data
    n = data.shape[0]
    levels = tree.levels
    log_z = np.empty((n, 1))
    inside = []  # per row: per level, log-sum over paths through each node
    for r in range(n):
        m = data[r, tree.level_slice(levels - 1)].copy()
        ms = [None] * levels
        ms[levels - 1] = m
        for level in range(levels - 1, 0, -1):
            par = tree.parents[level]
            n_par = tree.granularity_sizes[level - 1]
            mx = np.full(n_par, -np.inf)
            np.maximum.at(mx, par, m)
            tot = np.zeros(n_par)
            np.add.at(tot, par, np.exp(m - mx[par]))
            m = data[r, tree.level_slice(level - 1)] + mx + np.log(tot)
            ms[level - 1] = m
        mx = ms[0].max()
        log_z[r, 0] = mx + np.log(np.exp(ms[0] - mx).sum())
        inside.append(ms)

    def bw(g):
        for r in range(n):
            ms = inside[r]
            prob = np.exp(ms[0] - log_z[r, 0])
            grad_row = np.empty(data.shape[1])
            grad_row[tree.level_slice(0)] = prob
            for level in range(1, levels):
                par = tree.parents[level]
                # log-sum over a parent's children = inside(parent) - own score
                lse_children = ms[level - 1] - data[r, tree.level_slice(level - 1)]
                prob = prob[par] * np.exp(ms[level] - lse_children[par])
                grad_row[tree.level_slice(level)] = prob
            fused.grad[r] += g[r, 0] * grad_row

    return Tensor(log_z, (fused,), bw)


def pc_loss(fused: Tensor, labels, tree: HierarchyTree) -> Tensor:
    """Negative log path-softmax probability of the true path -> (n, 1)."""
    paths = _as_paths(labels, tree)
    for p in paths:
        if not tree.is_valid_path(p):
            raise SchemaError(f"label path {list(p)} violates the hierarchy")
    multi = np.array([tree.path_multihot(p) for p in paths])
    if multi.shape[0] != fused.shape[0]:
        raise SchemaError("one label path per fused row required")
    true_score = ad.rows_dot(fused, multi)
    return ad.add(path_partition(fused, tree), ad.scale(true_score, -1.0))


def composite_loss(fused: Tensor, labels, tree: HierarchyTree,
                   cfg: LossConfig) -> Tensor:
    """beta * mean(path loss) + (1 - beta) * mean(hierarchical CE)."""
    weights = cfg.weights(tree.levels)
    ce = ad.mean_all(hierarchical_ce(fused, labels, tree, weights))
    pc = ad.mean_all(pc_loss(fused, labels, tree))
    return ad.add(ad.scale(pc, cfg.beta), ad.scale(ce, 1.0 - cfg.beta))


def loss_terms(fused: Tensor, labels, tree: HierarchyTree, cfg: LossConfig):
    """(mean CE, mean PC, composite) as floats, one forward pass."""
    weights = cfg.weights(tree.levels)
    ce = ad.mean_all(hierarchical_ce(fused, labels, tree, weights)).item()
    pc = ad.mean_all(pc_loss(fused, labels, tree)).item()
    return ce, pc, cfg.beta * pc + (1.0 - cfg.beta) * ce
