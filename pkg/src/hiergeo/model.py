"""The hierarchical region prediction network: shared residual feature
units, one attention head per granularity plus a global head, and the
weighted local/global fusion.

Score vectors are laid out as one slice per granularity, coarse to fine,
followed by nothing else: slice g of the fused vector scores the regions
of granularity g; the global head scores all of them at once.
"""

from __future__ import annotations

import warnings
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError, HiergeoError
from .regions import HierarchyTree, LabelVector, make_label_vector

LEAKY_SLOPE = 0.01


class EmptyLandmarkSet(HiergeoError):
    """No landmarks available for a target; callers take the fallback path."""


@dataclass
class ModelConfig:
    input_dim: int
    hidden_dim: int
    granularity_sizes: list
    alpha: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DimensionError(f"alpha {self.alpha} outside [0, 1]")

    @property
    def levels(self):
        return len(self.granularity_sizes)

    @property
    def total_regions(self):
        return int(sum(self.granularity_sizes))

    def head_width(self, g):
        """Output width of head g; g == levels is the global head."""
        return self.total_regions if g == self.levels else int(self.granularity_sizes[g])

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "granularity_sizes": [int(s) for s in self.granularity_sizes],
                "alpha": self.alpha}

    @classmethod
    def from_dict(cls, doc):
        return cls(input_dim=doc["input_dim"], hidden_dim=doc["hidden_dim"],
                   granularity_sizes=list(doc["granularity_sizes"]),
                   alpha=doc["alpha"])


def param_shapes(cfg: ModelConfig):
    """Ordered name -> (rows, cols, fan_in); fan_in None marks a bias."""
    h = cfg.hidden_dim
    shapes = OrderedDict()
    shapes["feat0_W"] = (cfg.input_dim, h, cfg.input_dim)
    shapes["feat0_b"] = (1, h, None)
    for g in range(1, cfg.levels + 1):
        shapes[f"feat{g}_W"] = (h, h, h)
        shapes[f"feat{g}_b"] = (1, h, None)
    for g in range(cfg.levels + 1):
        w = cfg.head_width(g)
        shapes[f"head{g}_WQ"] = (h, h, h)
        shapes[f"head{g}_WK"] = (h, h, h)
        shapes[f"head{g}_WV"] = (w, w, w)
    return shapes


def build_params(cfg: ModelConfig, seed):
    store = ad.init_params(param_shapes(cfg), seed)
    store.meta["config"] = cfg.to_dict()
    return store


def feature_stack(X_l, X_t, params, cfg: ModelConfig):
    """G+1 pairs (H_l, H_t); unit 1 maps D -> h without a residual, the
    rest are h -> h with residual connections. Weights are shared between
    landmarks and targets."""
    xl = X_l if isinstance(X_l, Tensor) else Tensor(X_l)
    xt = X_t if isinstance(X_t, Tensor) else Tensor(X_t)
    if xl.shape[1] != cfg.input_dim or xt.shape[1] != cfg.input_dim:
        raise DimensionError(
            f"input dim {xl.shape[1]}/{xt.shape[1]} != model dim {cfg.input_dim}")
    n_l = xl.shape[0]
    joint = ad.concat_rows([xl, xt])
    stack = _stack_joint(joint, params, cfg)
    return [(ad.slice_rows(h, 0, n_l), ad.slice_rows(h, n_l, h.shape[0])) for h in stack]


def _stack_joint(joint: Tensor, params, cfg: ModelConfig):
    h = ad.leaky_relu(ad.add_bias(ad.matmul(joint, params["feat0_W"]),
                                  params["feat0_b"]), LEAKY_SLOPE)
    stack = [h]
    for g in range(1, cfg.levels + 1):
        pre = ad.add_bias(ad.matmul(h, params[f"feat{g}_W"]), params[f"feat{g}_b"])
        h = ad.add(ad.leaky_relu(pre, LEAKY_SLOPE), h)
        stack.append(h)
    return stack


def label_value_matrix(landmark_paths, g, cfg: ModelConfig, tree: HierarchyTree):
    """Row encodings of landmark labels for head g: one-hot over the
    granularity for local heads, the length-M path multi-hot for the
    global head."""
    paths = np.asarray(landmark_paths, dtype=np.intp)
    n = paths.shape[0]
    if g < cfg.levels:
        out = np.zeros((n, cfg.granularity_sizes[g]))
        out[np.arange(n), paths[:, g]] = 1.0
    else:
        out = np.zeros((n, cfg.total_regions))
        for i in range(n):
            out[i] = tree.path_multihot(paths[i])
    return out


def attention_head(g, H_t, H_l, V_labels, params, mask=None):
    """Scaled dot-product attention of targets over landmarks; values are
    the projected landmark label encodings."""
    if H_l.shape[0] == 0:
        raise EmptyLandmarkSet(f"head {g}: no landmarks to attend over")
    q = ad.matmul(H_t, params[f"head{g}_WQ"])
    k = ad.matmul(H_l, params[f"head{g}_WK"])
    v = ad.matmul(V_labels if isinstance(V_labels, Tensor) else Tensor(V_labels),
                  params[f"head{g}_WV"])
    d_k = k.shape[1]
    logits = ad.scale(ad.matmul(q, _transpose(k)), 1.0 / np.sqrt(d_k))
    weights = ad.softmax_rows(logits, mask=mask)
    return ad.matmul(weights, v)


def _transpose(t: Tensor) -> Tensor:
    def bw(g):
        t.grad += g.T

    return Tensor(t.data.T, (t,), bw)


def fuse(locals_, global_scores, alpha):
    """alpha * concat(locals) + (1 - alpha) * global."""
    cat = ad.concat_cols(locals_)
    if cat.shape != global_scores.shape:
        raise DimensionError(
            f"fuse shapes {cat.shape} vs {global_scores.shape}")
    return ad.add(ad.scale(cat, alpha), ad.scale(global_scores, 1.0 - alpha))


@dataclass
class PredictionBundle:
    locals: list  # G arrays, lengths = granularity_sizes
    global_scores: np.ndarray  # length M
    fused: np.ndarray  # length M


def forward(params, cfg: ModelConfig, X_l, landmark_paths, tree: HierarchyTree,
            X_t=None, mask=None):
    """Forward pass for a cluster context.

    X_t None means the targets are the landmarks themselves (training
    leave-one-out; pass a mask that blanks the diagonal). Returns Tensors
    (locals list, global, fused), each with one row per target.
    """
    if np.shape(X_l)[0] == 0:
        raise EmptyLandmarkSet("forward: empty landmark set")
    if X_t is None:
        joint = Tensor(X_l) if not isinstance(X_l, Tensor) else X_l
        stack = _stack_joint(joint, params, cfg)
        pairs = [(h, h) for h in stack]
    else:
        pairs = feature_stack(X_l, X_t, params, cfg)

    locals_ = []
    for g in range(cfg.levels):
        h_l, h_t = pairs[g]
        v = label_value_matrix(landmark_paths, g, cfg, tree)
        locals_.append(attention_head(g, h_t, h_l, v, params, mask=mask))
    h_l, h_t = pairs[cfg.levels]
    v = label_value_matrix(landmark_paths, cfg.levels, cfg, tree)
    global_t = attention_head(cfg.levels, h_t, h_l, v, params, mask=mask)
    fused = fuse(locals_, global_t, cfg.alpha)
    return locals_, global_t, fused


def bundle_from_tensors(locals_, global_t, fused, row=0) -> PredictionBundle:
    return PredictionBundle(
        locals=[l.data[row].copy() for l in locals_],
        global_scores=global_t.data[row].copy(),
        fused=fused.data[row].copy())


# ---------------------------------------------------------------------------
# decoding


def predict_topk(fused, tree: HierarchyTree, k):
    """Per granularity, the ids of the k largest fused scores in that
    granularity's slice; ties broken toward smaller ids."""
    if k < 1:
        raise DimensionError(f"k must be >= 1, got {k}")
    fused = np.asarray(fused).reshape(-1)
    out = []
    for level in range(tree.levels):
        sl = fused[tree.level_slice(level)]
        kk = k
        if kk > sl.size:
            warnings.warn(f"top-k {k} clamped to {sl.size} at granularity {level + 1}")
            kk = sl.size
        order = np.argsort(-sl, kind="stable")  # stable: equal scores keep id order
        out.append([int(i) for i in order[:kk]])
    return out


def decode_consistent_path(fused, tree: HierarchyTree) -> LabelVector:
    """Root-to-leaf path maximizing the summed fused score, by dynamic
    programming over the tree; ties resolve to the smaller leaf id."""
    fused = np.asarray(fused).reshape(-1)
    levels = tree.levels
    best = fused[tree.level_slice(levels - 1)].copy()
    choice = []  # choice[j][parent] = best child at level levels-1-j
    for level in range(levels - 1, 0, -1):
        parents = tree.parents[level]
        n_par = tree.granularity_sizes[level - 1]
        agg = np.full(n_par, -np.inf)
        arg = np.full(n_par, -1, dtype=np.intp)
        for child in range(best.size):  # increasing id: strict > keeps smaller id on ties
            p = parents[child]
            if best[child] > agg[p]:
                agg[p] = best[child]
                arg[p] = child
        choice.append(arg)
        best = fused[tree.level_slice(level - 1)] + agg
    root = int(np.argmax(best))  # argmax ties to smaller id
    path = [root]
    for arg in reversed(choice):
        path.append(int(arg[path[-1]]))
    return make_label_vector(path, tree)


def modal_train_path(dataset, tree: HierarchyTree):
    """Most common root-to-leaf label path among train hosts (ties toward
    the lexicographically smaller path); the empty-landmark fallback."""
    counts = Counter()
    for i in dataset.indices("train"):
        lv = dataset.labels_of(i)
        if lv is not None:
            counts[tuple(lv.per_granularity)] += 1
    if not counts:
        raise HiergeoError("no labeled train hosts for the fallback path")
    best = min(counts, key=lambda p: (-counts[p], p))
    return make_label_vector(list(best), tree)
