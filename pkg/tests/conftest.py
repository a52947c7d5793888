"""Shared fixtures: small hand-built trees, synthetic worlds, and helpers
for loading a world into a labeled Dataset."""

import numpy as np
import pytest

from hiergeo import hosts, regions, synthetic
from hiergeo.regions import HierarchyTree


def make_tree(sizes, parents):
    """HierarchyTree from explicit sizes and parent lists (overlap matrix
    restricted to the identity; enough for label/loss/model tests)."""
    par = [None] + [np.asarray(p, dtype=np.intp) for p in parents]
    overlap = np.eye(int(sum(sizes)), dtype=bool)
    return HierarchyTree(granularity_sizes=list(sizes), parents=par, overlap=overlap)


def random_tree(rng, max_levels=4, max_leaves=100):
    """A random hierarchy: level sizes grow, each child gets a random
    parent (every parent guaranteed at least one child at the next level)."""
    levels = int(rng.integers(2, max_levels + 1))
    sizes = [int(rng.integers(1, 4))]
    for _ in range(1, levels):
        sizes.append(int(rng.integers(sizes[-1], min(max_leaves, sizes[-1] * 4) + 1)))
    parents = []
    for level in range(1, levels):
        n_par, n_child = sizes[level - 1], sizes[level]
        p = rng.integers(0, n_par, size=n_child)
        p[:n_par] = np.arange(n_par)  # every parent keeps a child
        parents.append(np.sort(p))
    return make_tree(sizes, parents)


def enumerate_paths(tree):
    """All root-to-leaf paths, via the leaf parent chains."""
    return [tree.path_of_leaf(leaf) for leaf in range(tree.granularity_sizes[-1])]


@pytest.fixture
def tiny_tree():
    # sizes [2, 3, 5]: parents g2=[0,0,1], g3=[0,0,1,1,2]
    return make_tree([2, 3, 5], [[0, 0, 1], [0, 0, 1, 1, 2]])


def load_world(out_dir, sizes=(4, 12, 36), clusters=60, hosts_per_cluster=30,
               feature_noise=0.1, seed=17, ratio=0.8, standardize=True):
    """Generate a synthetic world and return (world, sets, tree, dataset)."""
    world = synthetic.generate_synthetic(str(out_dir), list(sizes), clusters,
                                         hosts_per_cluster, feature_noise, seed)
    sets = [regions.load_region_set(p, g + 1)
            for g, p in enumerate(world.region_paths)]
    tree = regions.build_hierarchy(sets)
    records = hosts.load_hosts(world.hosts_path)
    for rec in records:
        rec.labels = regions.assign_labels(rec.coord, sets, tree)
    dataset = hosts.Dataset(records)
    if ratio is not None:
        hosts.split_train_test(dataset.hosts, ratio, seed)
        if standardize:
            scaler = hosts.standardize_features(
                [dataset[i] for i in dataset.indices("train")])
            scaler.apply(dataset.hosts)
    return world, sets, tree, dataset


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A small labeled world shared by read-only tests."""
    out = tmp_path_factory.mktemp("small_world")
    return load_world(out, sizes=(2, 4, 8), clusters=10, hosts_per_cluster=8,
                      feature_noise=0.05, seed=3)
