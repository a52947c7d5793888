"""Synthetic worlds: nested rectangular region layers, router-clustered
hosts placed inside planted leaf regions, and geographically planted
point batches for the distribution study.

Everything is seeded and the planted truth is recorded so tests can use
it as an oracle.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

DEFAULT_BBOX = (121.0, 30.9, 121.6, 31.4)  # lon0, lat0, lon1, lat1

KM_PER_DEG_LAT = 111.195


@dataclass
class PlantedWorld:
    sizes: list
    layers: list  # layers[g] = list of dicts: region_id, name, rect, parent
    region_paths: list  # path for AOI file of each granularity
    hosts_path: str | None = None
    truth_path: str | None = None

    def parent_map(self, level):
        return {r["region_id"]: r["parent"] for r in self.layers[level]}


def _split_counts(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def nested_rectangle_layers(sizes, bbox=DEFAULT_BBOX):
    """Axis-aligned nested layers: level 0 slices the bounding box, each
    deeper level slices its parent (orientation alternates per level)."""
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"invalid granularity sizes {sizes}")
    if any(b > a for a, b in zip(sizes[1:], sizes)):
        raise ConfigError(f"granularity sizes must be nondecreasing: {sizes}")

    lon0, lat0, lon1, lat1 = bbox
    layers = [[]]
    for i, w in enumerate(np.linspace(lon0, lon1, sizes[0] + 1)[:-1]):
        width = (lon1 - lon0) / sizes[0]
        layers[0].append({"region_id": i, "name": f"g1-{i:04d}", "parent": None,
                          "rect": (w, lat0, w + width, lat1)})

    for level in range(1, len(sizes)):
        counts = _split_counts(sizes[level], sizes[level - 1])
        if min(counts) < 1:
            raise ConfigError(f"level {level + 1}: some parent would get no children")
        vertical = level % 2 == 1  # slice along latitude on odd levels
        layer = []
        rid = 0
        for parent, k in zip(layers[level - 1], counts):
            x0, y0, x1, y1 = parent["rect"]
            edges = np.linspace(y0, y1, k + 1) if vertical else np.linspace(x0, x1, k + 1)
            for j in range(k):
                rect = ((x0, edges[j], x1, edges[j + 1]) if vertical
                        else (edges[j], y0, edges[j + 1], y1))
                layer.append({"region_id": rid, "name": f"g{level + 1}-{rid:04d}",
                              "parent": parent["region_id"], "rect": rect})
                rid += 1
        layers.append(layer)
    return layers


def _rect_feature(entry):
    x0, y0, x1, y1 = entry["rect"]
    ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    return {"type": "Feature",
            "properties": {"region_id": entry["region_id"], "name": entry["name"]},
            "geometry": {"type": "Polygon", "coordinates": [ring]}}


def write_layer_geojson(layer, path):
    doc = {"type": "FeatureCollection", "features": [_rect_feature(e) for e in layer]}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def generate_synthetic(out_dir, sizes, clusters, hosts_per_cluster,
                       feature_noise, seed, noise_dims=4, bbox=DEFAULT_BBOX,
                       max_leaves_per_cluster=5) -> PlantedWorld:
    """Write AOI files, a host CSV and the planted-truth JSONL.

    Each router cluster is planted in 1..max_leaves_per_cluster leaf
    regions (hosts spread round-robin so no planted leaf is a singleton).
    Features: one-hot(cluster) + noisy normalized leaf centroid + noise.
    """
    if clusters < 1 or hosts_per_cluster < 1:
        raise ConfigError("clusters and hosts_per_cluster must be >= 1")
    layers = nested_rectangle_layers(sizes, bbox)
    os.makedirs(out_dir, exist_ok=True)
    region_paths = []
    for level, layer in enumerate(layers):
        path = os.path.join(out_dir, f"regions_g{level + 1}.geojson")
        write_layer_geojson(layer, path)
        region_paths.append(path)

    rng = np.random.default_rng(seed)
    lon0, lat0, lon1, lat1 = bbox
    leaves = layers[-1]
    n_leaves = len(leaves)

    ancestors = []  # leaf id -> path of local ids root..leaf
    for leaf in leaves:
        path = [leaf["region_id"]]
        level = len(layers) - 1
        entry = leaf
        while entry["parent"] is not None:
            path.append(entry["parent"])
            level -= 1
            entry = layers[level][entry["parent"]]
        ancestors.append(path[::-1])

    hosts_path = os.path.join(out_dir, "hosts.csv")
    truth_path = os.path.join(out_dir, "truth.jsonl")
    feat_dim = clusters + 2 + noise_dims
    header = ["ip"] + [f"f{j}" for j in range(feat_dim)] + ["lon", "lat", "last_hop"]

    with open(hosts_path, "w", newline="") as hfh, open(truth_path, "w") as tfh:
        writer = csv.writer(hfh)
        writer.writerow(header)
        serial = 0
        for c in range(clusters):
            k = int(rng.integers(1, max_leaves_per_cluster + 1))
            k = min(k, n_leaves, max(1, hosts_per_cluster // 2))
            planted = rng.choice(n_leaves, size=k, replace=False)
            last_hop = f"router-{c:05d}"
            for j in range(hosts_per_cluster):
                leaf_id = int(planted[j % k])
                x0, y0, x1, y1 = leaves[leaf_id]["rect"]
                mx, my = 0.2 * (x1 - x0), 0.2 * (y1 - y0)
                lon = rng.uniform(x0 + mx, x1 - mx)
                lat = rng.uniform(y0 + my, y1 - my)
                cx = ((x0 + x1) / 2 - lon0) / (lon1 - lon0)
                cy = ((y0 + y1) / 2 - lat0) / (lat1 - lat0)
                onehot = np.zeros(clusters)
                onehot[c] = 1.0
                centroid_enc = np.array([cx, cy]) + rng.normal(0.0, feature_noise, 2)
                noise = rng.normal(0.0, 1.0, noise_dims)
                feats = np.concatenate([onehot, centroid_enc, noise])
                ip = f"10.{serial // 65536}.{(serial // 256) % 256}.{serial % 256}"
                serial += 1
                writer.writerow([ip] + [repr(float(v)) for v in feats] +
                                [repr(float(lon)), repr(float(lat)), last_hop])
                tfh.write(json.dumps({"ip": ip, "cluster": last_hop,
                                      "path": ancestors[leaf_id],
                                      "leaf": leaf_id}) + "\n")

    return PlantedWorld(sizes=list(sizes), layers=layers, region_paths=region_paths,
                        hosts_path=hosts_path, truth_path=truth_path)


def load_truth(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# planted geographic batches for the distribution study


def planted_geo_batches(n_batches, clusters_per_batch, points_per_cluster,
                        eps_km, seed, noise_points=0, separation_factor=10.0,
                        center=(121.3, 31.2)):
    """Batches of (lon, lat) points in tight planted clusters whose centers
    are separated by separation_factor * eps_km, plus isolated noise points.

    Returns a list of dicts: points (n, 2), planted labels (-1 = noise).
    """
    rng = np.random.default_rng(seed)
    lon_c, lat_c = center
    km_per_deg_lon = KM_PER_DEG_LAT * math.cos(math.radians(lat_c))
    sep_km = separation_factor * eps_km
    batches = []
    for _ in range(n_batches):
        points, labels = [], []
        for k in range(clusters_per_batch):
            # cluster centers on a ring, pairwise >= sep_km apart
            ang = 2 * math.pi * k / max(clusters_per_batch, 1)
            if clusters_per_batch > 1:
                # keep adjacent ring neighbours at least sep_km apart
                radius = max(sep_km, sep_km / (2 * math.sin(math.pi / clusters_per_batch)))
            else:
                radius = 0.0
            cx = lon_c + radius * math.cos(ang) / km_per_deg_lon
            cy = lat_c + radius * math.sin(ang) / KM_PER_DEG_LAT
            spread = 0.1 * eps_km
            for _ in range(points_per_cluster):
                points.append([cx + rng.normal(0, spread) / km_per_deg_lon,
                               cy + rng.normal(0, spread) / KM_PER_DEG_LAT])
                labels.append(k)
        for j in range(noise_points):
            # isolated, far from every cluster and from each other
            d = sep_km * (3 + 2 * j)
            points.append([lon_c + d / km_per_deg_lon, lat_c - d / KM_PER_DEG_LAT])
            labels.append(-1)
        batches.append({"points": np.array(points), "labels": np.array(labels)})
    return batches
