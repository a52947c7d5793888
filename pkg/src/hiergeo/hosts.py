"""Host records: ingestion, last-hop clustering, landmark selection,
train/test splitting and feature standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, GuardError, SchemaError


@dataclass
class HostRecord:
    ip: str
    features: np.ndarray
    coord: tuple | None = None  # (lon, lat)
    last_hop: str | None = None
    labels: object = None  # LabelVector for landmarks, None for pure targets
    split: str = "unlabeled"  # train | test | unlabeled


class Dataset:
    """Immutable table of hosts with a guard on test-split labels.

    While ``lock_test_labels`` is set (the default during training), reading
    the labels of a test host raises GuardError.
    """

    def __init__(self, hosts):
        self.hosts = list(hosts)
        self.lock_test_labels = True

    def __len__(self):
        return len(self.hosts)

    def __getitem__(self, i) -> HostRecord:
        return self.hosts[i]

    def labels_of(self, i):
        h = self.hosts[i]
        if self.lock_test_labels and h.split == "test":
            raise GuardError(f"labels of test host {h.ip} read while locked")
        return h.labels

    def indices(self, split=None):
        if split is None:
            return list(range(len(self.hosts)))
        return [i for i, h in enumerate(self.hosts) if h.split == split]

    def feature_matrix(self, idx=None):
        idx = range(len(self.hosts)) if idx is None else idx
        return np.array([self.hosts[i].features for i in idx])


def _record_from_fields(ip, feats, lon, lat, last_hop):
    return HostRecord(ip=ip, features=np.asarray(feats, dtype=np.float64),
                      coord=(float(lon), float(lat)), last_hop=last_hop)


def load_hosts(path):
    """Load host records from CSV (header ip,f0..f{D-1},lon,lat,last_hop)
    or line-JSON with the same keys. D is inferred and enforced."""
    if str(path).endswith((".jsonl", ".ndjson")):
        return _load_hosts_jsonl(path)
    return _load_hosts_csv(path)


def _load_hosts_csv(path):
    hosts = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return hosts
        expected = None
        feat_cols = [c for c in header if c.startswith("f")]
        for name in ("ip", "lon", "lat", "last_hop"):
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        col = {name: header.index(name) for name in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                feats = [float(row[col[c]]) for c in feat_cols]
                rec = _record_from_fields(row[col["ip"]], feats,
                                          row[col["lon"]], row[col["lat"]],
                                          row[col["last_hop"]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if expected is None:
                expected = len(feats)
            elif len(feats) != expected:
                raise SchemaError(f"{path}:{lineno}: feature dimension {len(feats)} != {expected}")
            hosts.append(rec)
    return hosts


def _load_hosts_jsonl(path):
    hosts = []
    expected = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                feat_keys = sorted((k for k in doc if k.startswith("f") and k[1:].isdigit()),
                                   key=lambda k: int(k[1:]))
                feats = [float(doc[k]) for k in feat_keys]
                rec = _record_from_fields(doc["ip"], feats, doc["lon"], doc["lat"],
                                          doc["last_hop"])
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if expected is None:
                expected = len(feats)
            elif len(feats) != expected:
                raise SchemaError(f"{path}:{lineno}: feature dimension {len(feats)} != {expected}")
            hosts.append(rec)
    return hosts


# ---------------------------------------------------------------------------
# clustering and landmark selection


@dataclass
class ClusterSet:
    clusters: dict  # last_hop id -> list of host indices
    rejected: list = field(default_factory=list)  # (index, reason)

    def cluster_of(self):
        """host index -> last_hop id."""
        out = {}
        for key, members in self.clusters.items():
            for i in members:
                out[i] = key
        return out


def cluster_by_last_hop(hosts) -> ClusterSet:
    clusters = {}
    rejected = []
    for i, h in enumerate(hosts):
        if not h.last_hop:
            rejected.append((i, "missing last_hop"))
            continue
        clusters.setdefault(h.last_hop, []).append(i)
    return ClusterSet(clusters=clusters, rejected=rejected)


def select_landmarks(target_index, clusters: ClusterSet, hosts):
    """Train-split hosts sharing the target's cluster, excluding the target
    itself. An empty result signals the fallback path."""
    key = hosts[target_index].last_hop
    members = clusters.clusters.get(key, [])
    return [i for i in members
            if i != target_index and hosts[i].split == "train"]


# ---------------------------------------------------------------------------
# splitting and scaling


def split_train_test(hosts, ratio, seed):
    """Assign floor(ratio * N) hosts to train, the rest to test, in place.
    Reproducible under seed."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio {ratio} outside (0, 1)")
    n = len(hosts)
    n_train = int(ratio * n)
    order = np.random.default_rng(seed).permutation(n)
    for pos, i in enumerate(order):
        hosts[i].split = "train" if pos < n_train else "test"
    return {hosts[i].ip: hosts[i].split for i in range(n)}


def export_split(hosts, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ip", "split"])
        for h in hosts:
            writer.writerow([h.ip, h.split])


def apply_split(hosts, path):
    with open(path, newline="") as fh:
        mapping = {row["ip"]: row["split"] for row in csv.DictReader(fh)}
    for h in hosts:
        if h.ip in mapping:
            h.split = mapping[h.ip]


class FeatureScaler:
    """Per-dimension z-score from train statistics; near-constant
    dimensions (std < 1e-12) pass through unscaled."""

    def __init__(self, mean, std):
        self.mean = mean
        self.std = std

    @classmethod
    def fit(cls, train_hosts):
        if len(train_hosts) < 2:
            raise ConfigError("standardization needs >= 2 train hosts")
        X = np.array([h.features for h in train_hosts])
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        keep = std < 1e-12
        mean = np.where(keep, 0.0, mean)
        std = np.where(keep, 1.0, std)
        return cls(mean, std)

    def apply(self, hosts):
        for h in hosts:
            h.features = (h.features - self.mean) / self.std
        return hosts


def standardize_features(train_hosts) -> FeatureScaler:
    return FeatureScaler.fit(train_hosts)
