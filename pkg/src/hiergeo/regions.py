"""Polygonal region layers, point-to-region assignment and the
cross-granularity containment hierarchy.

Coordinates are planar (lon, lat) degrees; containment uses the even-odd
rule, which is adequate at city scale. A region may consist of several
polygon parts (split multi-polygons), each part being an outer ring plus
optional hole rings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPolygon, Polygon
from shapely.strtree import STRtree

from .exceptions import GeometryError, SchemaError


@dataclass
class Region:
    region_id: int
    name: str
    # parts[i] = list of rings; ring = (k, 2) float array, closed
    parts: list = field(default_factory=list)

    def bbox(self):
        pts = np.vstack([r for part in self.parts for r in part])
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


@dataclass
class RegionSet:
    granularity_index: int  # 1-based level
    regions: list  # sorted by region_id, ids dense in [0, count)

    def __len__(self):
        return len(self.regions)

    def __getitem__(self, region_id) -> Region:
        return self.regions[region_id]


def _validate_ring(ring, feature_label):
    ring = np.asarray(ring, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 4:
        raise GeometryError(f"{feature_label}: ring must have >= 4 (lon, lat) vertices")
    if not np.array_equal(ring[0], ring[-1]):
        raise GeometryError(f"{feature_label}: ring is not closed")
    if (np.abs(ring[:, 0]) > 180).any() or (np.abs(ring[:, 1]) > 90).any():
        raise GeometryError(f"{feature_label}: coordinates outside lon/lat bounds")
    return ring


def load_region_set(path, granularity_index, id_property="region_id"):
    """Load one granularity layer from a polygon feature-collection file.

    Multi-polygon features are split into parts sharing one region_id.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    feats = doc.get("features")
    if doc.get("type") != "FeatureCollection" or feats is None:
        raise SchemaError(f"{path}: expected a FeatureCollection")

    by_id = {}
    for i, feat in enumerate(feats):
        props = feat.get("properties") or {}
        if id_property not in props:
            raise SchemaError(f"{path}: feature {i} missing property {id_property!r}")
        rid = props[id_property]
        if not isinstance(rid, int) or rid < 0:
            raise SchemaError(f"{path}: feature {i} has non-integer region id {rid!r}")
        if rid in by_id:
            raise SchemaError(f"{path}: duplicate region_id {rid} at feature {i}")
        name = str(props.get("name", f"region-{rid}"))
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        label = f"{path}: feature {i} (region {rid})"
        if gtype == "Polygon":
            polys = [geom.get("coordinates")]
        elif gtype == "MultiPolygon":
            polys = geom.get("coordinates")
        else:
            raise GeometryError(f"{label}: unsupported geometry type {gtype!r}")
        parts = []
        for poly in polys:
            if not poly:
                raise GeometryError(f"{label}: empty polygon")
            parts.append([_validate_ring(ring, label) for ring in poly])
        by_id[rid] = Region(region_id=rid, name=name, parts=parts)

    ids = sorted(by_id)
    if ids != list(range(len(ids))):
        raise SchemaError(f"{path}: region ids not dense in [0, {len(ids)})")
    return RegionSet(granularity_index=granularity_index,
                     regions=[by_id[i] for i in ids])


# ---------------------------------------------------------------------------
# containment


def _on_ring_boundary(x, y, ring):
    xs, ys = ring[:, 0], ring[:, 1]
    for i in range(len(ring) - 1):
        x1, y1, x2, y2 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) != 0.0:
            continue
        if min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
    return False


def _ring_crossing_parity(x, y, ring):
    # even-odd crossings of the ray {(t, y) : t > x}
    inside = False
    xs, ys = ring[:, 0], ring[:, 1]
    for i in range(len(ring) - 1):
        x1, y1, x2, y2 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def point_in_region(coord, region: Region):
    """Even-odd containment; points exactly on a boundary count as inside."""
    x, y = float(coord[0]), float(coord[1])
    for part in region.parts:
        if any(_on_ring_boundary(x, y, ring) for ring in part):
            return True
        parity = False
        for ring in part:
            if _ring_crossing_parity(x, y, ring):
                parity = not parity
        if parity:
            return True
    return False


def assign_region(coord, rset: RegionSet):
    """Id of a containing region, smallest id on boundary ties, else None."""
    for region in rset.regions:  # sorted by id, so first hit is smallest
        if point_in_region(coord, region):
            return region.region_id
    return None


# ---------------------------------------------------------------------------
# hierarchy


@dataclass
class HierarchyTree:
    granularity_sizes: list
    # parents[g] maps region id at level g (0-based, g >= 1) to its parent id
    parents: list
    overlap: np.ndarray  # (M, M) bool

    def __post_init__(self):
        self.offsets = np.concatenate(([0], np.cumsum(self.granularity_sizes)))

    @property
    def levels(self):
        return len(self.granularity_sizes)

    @property
    def total_regions(self):
        return int(self.offsets[-1])

    def global_id(self, level, region_id):
        return int(self.offsets[level]) + int(region_id)

    def level_slice(self, level):
        return slice(int(self.offsets[level]), int(self.offsets[level + 1]))

    def parent_of(self, level, region_id):
        if level == 0:
            return None
        return int(self.parents[level][region_id])

    def path_of_leaf(self, leaf_id):
        """Local region ids from root level down to the given leaf."""
        path = [int(leaf_id)]
        for level in range(self.levels - 1, 0, -1):
            path.append(int(self.parents[level][path[-1]]))
        return path[::-1]

    def leaf_paths(self):
        """(n_leaves, G) array of local ids, row ℓ = path to leaf ℓ."""
        n = self.granularity_sizes[-1]
        return np.array([self.path_of_leaf(i) for i in range(n)], dtype=np.intp)

    def path_multihot(self, path):
        vec = np.zeros(self.total_regions)
        for level, rid in enumerate(path):
            vec[self.global_id(level, rid)] = 1.0
        return vec

    def is_valid_path(self, path):
        if len(path) != self.levels:
            return False
        for level in range(self.levels):
            if not 0 <= path[level] < self.granularity_sizes[level]:
                return False
        for level in range(1, self.levels):
            if self.parents[level][path[level]] != path[level - 1]:
                return False
        return True

    def export(self, edges_path, meta_path):
        with open(edges_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["child_global_id", "parent_global_id"])
            for level in range(1, self.levels):
                for rid in range(self.granularity_sizes[level]):
                    writer.writerow([self.global_id(level, rid),
                                     self.global_id(level - 1, self.parents[level][rid])])
        with open(meta_path, "w") as fh:
            json.dump({"granularity_sizes": [int(s) for s in self.granularity_sizes]}, fh)
            fh.write("\n")


def region_to_shapely(region: Region):
    polys = [Polygon(part[0], holes=part[1:]) for part in region.parts]
    return polys[0] if len(polys) == 1 else MultiPolygon(polys)


def build_hierarchy(sets) -> HierarchyTree:
    """Overlap matrix from pairwise intersection across adjacent levels
    (transitively closed beyond); parent = coarser region with maximal
    intersection area, smaller id on ties.
    """
    if len(sets) < 2:
        raise SchemaError("build_hierarchy needs >= 2 granularities")
    sizes = [len(s) for s in sets]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(offsets[-1])

    geoms = [[region_to_shapely(r) for r in s.regions] for s in sets]
    parents = [None]
    overlap = np.zeros((total, total), dtype=bool)
    np.fill_diagonal(overlap, True)

    for level in range(1, len(sets)):
        coarse = geoms[level - 1]
        tree = STRtree(coarse)
        level_parents = np.full(sizes[level], -1, dtype=np.intp)
        for rid, geom in enumerate(geoms[level]):
            best_area, best_parent = 0.0, -1
            for cand in sorted(tree.query(geom).tolist()):
                area = geom.intersection(coarse[cand]).area
                if area > 0.0:
                    overlap[offsets[level] + rid, offsets[level - 1] + cand] = True
                    overlap[offsets[level - 1] + cand, offsets[level] + rid] = True
                    if area > best_area:  # ties keep the smaller candidate id
                        best_area, best_parent = area, cand
            if best_parent < 0:
                raise GeometryError(
                    f"region {rid} at granularity {level + 1} overlaps no coarser region")
            level_parents[rid] = best_parent
        parents.append(level_parents)

    # transitive closure across non-adjacent levels
    for gap in range(2, len(sets)):
        for lo in range(len(sets) - gap):
            hi = lo + gap
            mid = hi - 1
            block = overlap[offsets[lo]:offsets[lo + 1], offsets[mid]:offsets[mid + 1]] @ \
                overlap[offsets[mid]:offsets[mid + 1], offsets[hi]:offsets[hi + 1]]
            overlap[offsets[lo]:offsets[lo + 1], offsets[hi]:offsets[hi + 1]] = block
            overlap[offsets[hi]:offsets[hi + 1], offsets[lo]:offsets[lo + 1]] = block.T

    return HierarchyTree(granularity_sizes=sizes, parents=parents, overlap=overlap)


# ---------------------------------------------------------------------------
# labels


@dataclass
class LabelVector:
    per_granularity: list  # one local region id per level
    multi_hot: np.ndarray  # length M, exactly G ones on a root-to-leaf path


def make_label_vector(path, tree: HierarchyTree) -> LabelVector:
    if not tree.is_valid_path(path):
        raise SchemaError(f"label path {path} violates the hierarchy")
    return LabelVector(per_granularity=list(path), multi_hot=tree.path_multihot(path))


def assign_labels(coord, sets, tree: HierarchyTree):
    """LabelVector for a coordinate, or None if the host is unassignable
    (outside some level, or the per-level ids break the tree)."""
    path = []
    for rset in sets:
        rid = assign_region(coord, rset)
        if rid is None:
            return None
        path.append(rid)
    if not tree.is_valid_path(path):
        return None
    return make_label_vector(path, tree)


# ---------------------------------------------------------------------------
# centroids


def region_centroid(rset: RegionSet, region_id):
    """Interior representative point: area centroid when it lies inside,
    else the midpoint of the widest interior scanline."""
    region = rset[region_id]
    geom = region_to_shapely(region)
    if geom.area <= 0.0:
        raise GeometryError(f"region {region_id}: degenerate zero-area polygon")
    c = geom.centroid
    if point_in_region((c.x, c.y), region):
        return (c.x, c.y)

    ys = np.unique(np.concatenate(
        [ring[:, 1] for part in region.parts for ring in part]))
    best = None
    for y in (ys[:-1] + ys[1:]) / 2.0:
        xs = []
        for part in region.parts:
            for ring in part:
                x1, y1 = ring[:-1, 0], ring[:-1, 1]
                x2, y2 = ring[1:, 0], ring[1:, 1]
                hit = (y1 > y) != (y2 > y)
                xs.extend(x1[hit] + (y - y1[hit]) * (x2[hit] - x1[hit]) / (y2[hit] - y1[hit]))
        xs = sorted(xs)
        for lo, hi in zip(xs[0::2], xs[1::2]):  # even-odd interior intervals
            mid = (lo + hi) / 2.0
            if point_in_region((mid, y), region):
                width = hi - lo
                if best is None or width > best[0]:
                    best = (width, (mid, y))
    if best is None:
        raise GeometryError(f"region {region_id}: no interior scanline found")
    return best[1]
