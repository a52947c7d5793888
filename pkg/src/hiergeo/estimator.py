"""Scikit-learn style wrapper around the hierarchical region model.

fit() consumes a feature matrix, per-granularity label paths and the
last-hop router key of every host; predict() places new hosts into their
router clusters and scores them against the fitted landmarks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import SchemaError
from .hosts import Dataset, HostRecord
from .model import ModelConfig, modal_train_path
from .regions import HierarchyTree, make_label_vector
from .training import TrainConfig, predict_indices, train


class HierarchicalRegionClassifier(BaseEstimator):
    def __init__(self, tree: HierarchyTree = None, lr=2e-3, alpha=0.3, beta=0.3,
                 hidden_dim=32, lambda_g=None, epochs=50, seed=0):
        self.tree = tree
        self.lr = lr
        self.alpha = alpha
        self.beta = beta
        self.hidden_dim = hidden_dim
        self.lambda_g = lambda_g
        self.epochs = epochs
        self.seed = seed

    def _check_inputs(self, X, last_hop, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise SchemaError("X must be a 2-D feature matrix")
        if last_hop is None or len(last_hop) != X.shape[0]:
            raise SchemaError("one last_hop key per row of X is required")
        if y is not None:
            y = np.asarray(y, dtype=np.intp)
            if y.shape != (X.shape[0], self.tree.levels):
                raise SchemaError(
                    f"y must have shape (n, {self.tree.levels}), got {y.shape}")
        return X, y

    def fit(self, X, y, last_hop=None):
        if self.tree is None:
            raise SchemaError("a HierarchyTree must be supplied at construction")
        X, y = self._check_inputs(X, last_hop, y)
        records = []
        for i in range(X.shape[0]):
            labels = make_label_vector(list(y[i]), self.tree)
            records.append(HostRecord(ip=f"fit-{i}", features=X[i],
                                      last_hop=str(last_hop[i]), labels=labels,
                                      split="train"))
        self._train_records = records
        dataset = Dataset(records)
        cfg = TrainConfig(lr=self.lr, alpha=self.alpha, beta=self.beta,
                          hidden_dim=self.hidden_dim,
                          lambda_g=list(self.lambda_g or []),
                          epochs=self.epochs, seed=self.seed)
        self.params_, self.history_ = train(dataset, self.tree, cfg)
        self.model_cfg_ = ModelConfig.from_dict(self.params_.meta["config"])
        self.fallback_path_ = modal_train_path(dataset, self.tree)
        return self

    def _fused_rows(self, X, last_hop):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit must be called before predict")
        X, _ = self._check_inputs(X, last_hop)
        targets = [HostRecord(ip=f"target-{i}", features=X[i],
                              last_hop=str(last_hop[i]), split="test")
                   for i in range(X.shape[0])]
        dataset = Dataset(self._train_records + targets)
        offset = len(self._train_records)
        idx = list(range(offset, offset + len(targets)))
        rows = predict_indices(self.params_, self.model_cfg_, dataset, self.tree, idx)
        return [rows[i] for i in idx]

    def predict(self, X, last_hop=None):
        """(n, G) array of per-granularity region ids (slice argmax)."""
        rows = self._fused_rows(X, last_hop)
        out = np.empty((len(rows), self.tree.levels), dtype=np.intp)
        for r, fused in enumerate(rows):
            if fused is None:
                out[r] = self.fallback_path_.per_granularity
            else:
                out[r] = [int(np.argmax(fused[self.tree.level_slice(g)]))
                          for g in range(self.tree.levels)]
        return out

    def decision_function(self, X, last_hop=None):
        """(n, M) fused score matrix; fallback rows score their modal
        path 1 and everything else 0."""
        rows = self._fused_rows(X, last_hop)
        out = np.empty((len(rows), self.tree.total_regions))
        for r, fused in enumerate(rows):
            out[r] = self.fallback_path_.multi_hot if fused is None else fused
        return out

    def score(self, X, y, last_hop=None):
        """Accuracy at the finest granularity."""
        preds = self.predict(X, last_hop=last_hop)
        y = np.asarray(y, dtype=np.intp)
        return float((preds[:, -1] == y[:, -1]).mean())
