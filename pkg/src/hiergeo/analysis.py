"""Distribution study: per-batch haversine DBSCAN over host coordinates
and the category statistics table (not clustered / all in one cluster /
partially in one / more than one cluster)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.cluster import DBSCAN

from .exceptions import ConfigError
from .metrics import haversine_km

CATEGORIES = ["Not clustered", "All in one cluster", "Partially in one cluster",
              "Clusters > 1"]


def _pairwise_haversine(points):
    n = len(points)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = haversine_km(points[i], points[j])
    return d


def dbscan_haversine(points, eps_km, min_samples):
    """DBSCAN labels over (lon, lat) points, -1 for noise. A core point
    has >= min_samples neighbours within eps, itself included; labels are
    deterministic for a fixed point order."""
    if eps_km <= 0:
        raise ConfigError(f"eps_km must be > 0, got {eps_km}")
    if min_samples < 1:
        raise ConfigError(f"min_samples must be >= 1, got {min_samples}")
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.array([], dtype=np.intp)
    dist = _pairwise_haversine(points)
    db = DBSCAN(eps=eps_km, min_samples=min_samples, metric="precomputed")
    return db.fit_predict(dist)


@dataclass
class BatchStats:
    batch_id: object
    size: int
    cluster_count: int
    clustered_fraction: float
    avg_intra_km: float | None
    min_inter_km: float | None
    category: str


@dataclass
class ClusterReport:
    batches: list  # BatchStats
    skipped_empty: int = 0
    aggregates: dict = field(default_factory=dict)

    def build_aggregates(self):
        rows = {}
        for cat in CATEGORIES + ["Total"]:
            members = [b for b in self.batches
                       if cat == "Total" or b.category == cat]
            intra = [b.avg_intra_km for b in members if b.avg_intra_km is not None]
            inter = [b.min_inter_km for b in members if b.min_inter_km is not None]
            rows[cat] = {
                "batches": len(members),
                "ips": sum(b.size for b in members),
                "clustered_fraction": (
                    float(np.mean([b.clustered_fraction for b in members]))
                    if members else 0.0),
                "avg_intra_km": float(np.mean(intra)) if intra else None,
                "min_inter_km": float(min(inter)) if inter else None,
            }
        self.aggregates = rows
        return rows

    def save_csv(self, table_path, detail_path):
        if not self.aggregates:
            self.build_aggregates()
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "batches", "ips", "clustered_fraction",
                             "avg_intra_km", "min_inter_km"])
            for cat in CATEGORIES + ["Total"]:
                row = self.aggregates[cat]
                writer.writerow([cat, row["batches"], row["ips"],
                                 repr(row["clustered_fraction"]),
                                 "" if row["avg_intra_km"] is None else repr(row["avg_intra_km"]),
                                 "" if row["min_inter_km"] is None else repr(row["min_inter_km"])])
        with open(detail_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch_id", "size", "cluster_count", "clustered_fraction",
                             "avg_intra_km", "min_inter_km", "category"])
            for b in self.batches:
                writer.writerow([b.batch_id, b.size, b.cluster_count,
                                 repr(b.clustered_fraction),
                                 "" if b.avg_intra_km is None else repr(b.avg_intra_km),
                                 "" if b.min_inter_km is None else repr(b.min_inter_km),
                                 b.category])


def _batch_stats(batch_id, points, labels) -> BatchStats:
    n = len(points)
    clustered = labels >= 0
    cluster_ids = sorted(set(labels[clustered].tolist()))
    frac = float(clustered.mean()) if n else 0.0

    intra = []
    for c in cluster_ids:
        members = np.flatnonzero(labels == c)
        intra.extend(haversine_km(points[i], points[j])
                     for i, j in combinations(members, 2))
    avg_intra = float(np.mean(intra)) if intra else None

    min_inter = None
    if len(cluster_ids) >= 2:
        idx = np.flatnonzero(clustered)
        best = np.inf
        for i, j in combinations(idx, 2):
            if labels[i] != labels[j]:
                best = min(best, haversine_km(points[i], points[j]))
        min_inter = float(best)

    if len(cluster_ids) >= 2:
        category = "Clusters > 1"
    elif frac == 0.0:
        category = "Not clustered"
    elif frac == 1.0:
        category = "All in one cluster"
    else:
        category = "Partially in one cluster"
    return BatchStats(batch_id=batch_id, size=n, cluster_count=len(cluster_ids),
                      clustered_fraction=frac, avg_intra_km=avg_intra,
                      min_inter_km=min_inter, category=category)


def batch_statistics(batches, eps_km, min_samples) -> ClusterReport:
    """Run DBSCAN per batch and build the category report.

    batches: iterable of (batch_id, (n, 2) lon/lat array); empty batches
    are skipped and counted.
    """
    stats = []
    skipped = 0
    for batch_id, points in batches:
        points = np.asarray(points, dtype=np.float64)
        if len(points) == 0:
            skipped += 1
            continue
        labels = dbscan_haversine(points, eps_km, min_samples)
        stats.append(_batch_stats(batch_id, points, labels))
    report = ClusterReport(batches=stats, skipped_empty=skipped)
    report.build_aggregates()
    return report
