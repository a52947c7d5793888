"""Classification metrics per granularity, top-k accuracy, and the
centroid-based geolocation error distribution."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SchemaError
from .regions import RegionSet, region_centroid

EARTH_RADIUS_KM = 6371.0


def confusion_metrics(preds, truths, class_count):
    """(accuracy, macro precision, macro recall, macro F1).

    Macro averages run over classes with ground-truth support; a class
    with no predicted positives contributes precision 0, and per-class F1
    is 0 when precision + recall is 0.
    """
    preds = np.asarray(preds, dtype=np.intp)
    truths = np.asarray(truths, dtype=np.intp)
    if preds.size == 0 or preds.shape != truths.shape:
        raise SchemaError("confusion_metrics needs equal-length nonempty inputs")
    if (preds < 0).any() or (preds >= class_count).any() or \
            (truths < 0).any() or (truths >= class_count).any():
        raise SchemaError(f"class id out of range [0, {class_count})")

    accuracy = float((preds == truths).mean())
    tp = np.zeros(class_count)
    fp = np.zeros(class_count)
    fn = np.zeros(class_count)
    for c in range(class_count):
        tp[c] = ((preds == c) & (truths == c)).sum()
        fp[c] = ((preds == c) & (truths != c)).sum()
        fn[c] = ((preds != c) & (truths == c)).sum()

    support = tp + fn > 0
    precisions, recalls, f1s = [], [], []
    for c in np.flatnonzero(support):
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        r = tp[c] / (tp[c] + fn[c])
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return (accuracy, float(np.mean(precisions)), float(np.mean(recalls)),
            float(np.mean(f1s)))


def topk_accuracy(topk_preds, truths):
    """Fraction of targets whose true id appears in its prediction set."""
    truths = list(truths)
    if len(topk_preds) != len(truths):
        raise SchemaError("topk_accuracy needs one prediction set per truth")
    if not truths:
        return 0.0
    hits = sum(1 for pset, t in zip(topk_preds, truths) if t in pset)
    return hits / len(truths)


def haversine_km(a, b):
    """Great-circle distance between (lon, lat) points, radius 6371 km."""
    lon1, lat1 = math.radians(a[0]), math.radians(a[1])
    lon2, lat2 = math.radians(b[0]), math.radians(b[1])
    s = math.sin((lat2 - lat1) / 2) ** 2 + \
        math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def error_cdf(leaf_topk, true_coords, finest_set: RegionSet, k):
    """Sorted km distances, one per target: the minimum over the first k
    predicted finest-granularity regions of the distance from the true
    coordinate to the region centroid.

    Targets with a None coordinate are excluded; their count is returned
    alongside the samples.
    """
    centroids = {}

    def centroid(rid):
        if rid not in centroids:
            centroids[rid] = region_centroid(finest_set, rid)
        return centroids[rid]

    samples = []
    excluded = 0
    for preds, coord in zip(leaf_topk, true_coords):
        if coord is None:
            excluded += 1
            continue
        dists = [haversine_km(coord, centroid(rid)) for rid in preds[:k]]
        samples.append(min(dists))
    return np.sort(np.array(samples)), excluded


def write_cdf_csv(samples, path):
    samples = np.sort(np.asarray(samples))
    n = len(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank_fraction", "km"])
        for i, km in enumerate(samples, start=1):
            writer.writerow([repr(i / n), repr(float(km))])


@dataclass
class MetricsReport:
    per_granularity: list  # dicts: accuracy, macro_precision/recall/f1
    topk: dict = field(default_factory=dict)  # k -> per-granularity accuracy list
    error_medians: dict = field(default_factory=dict)  # k -> median km
    excluded: int = 0

    def to_dict(self):
        return {"per_granularity": self.per_granularity,
                "topk_accuracy": {str(k): v for k, v in self.topk.items()},
                "error_median_km": {str(k): v for k, v in self.error_medians.items()},
                "excluded_targets": self.excluded}

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["granularity", "accuracy", "macro_precision",
                             "macro_recall", "macro_f1"])
            for g, row in enumerate(self.per_granularity, start=1):
                writer.writerow([g, repr(row["accuracy"]), repr(row["macro_precision"]),
                                 repr(row["macro_recall"]), repr(row["macro_f1"])])
