"""Hierarchical multi-granularity region prediction for IP hosts."""

from .estimator import HierarchicalRegionClassifier
from .hosts import Dataset, HostRecord, cluster_by_last_hop, load_hosts
from .model import ModelConfig, decode_consistent_path, predict_topk
from .regions import (HierarchyTree, LabelVector, RegionSet, assign_labels,
                      assign_region, build_hierarchy, load_region_set,
                      region_centroid)
from .training import TrainConfig, grid_search, train

__all__ = [
    "HierarchicalRegionClassifier", "Dataset", "HostRecord", "cluster_by_last_hop",
    "load_hosts", "ModelConfig", "decode_consistent_path", "predict_topk",
    "HierarchyTree", "LabelVector", "RegionSet", "assign_labels", "assign_region",
    "build_hierarchy", "load_region_set", "region_centroid", "TrainConfig",
    "grid_search", "train",
]

__version__ = "0.1.0"
