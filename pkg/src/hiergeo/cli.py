"""Command-line entry point: the pipeline as subcommands over a shared
config file (TOML or JSON).

Exit codes: 0 success, 1 usage/config, 2 data validation, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import analysis, hosts, losses, metrics, model, regions, synthetic, training
from .autodiff import ParamStore
from .exceptions import (ConfigError, GeometryError, NumericError, SchemaError)


def load_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    if str(path).endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_region_sets(cfg):
    paths = cfg.get("paths", {}).get("regions")
    if not paths:
        raise ConfigError("config [paths].regions must list one AOI file per granularity")
    for p in paths:
        if not os.path.exists(p):
            raise ConfigError(f"AOI file {p} does not exist")
    id_prop = cfg.get("paths", {}).get("region_id_property", "region_id")
    return [regions.load_region_set(p, g + 1, id_property=id_prop)
            for g, p in enumerate(paths)]


def _load_host_records(cfg):
    path = cfg.get("paths", {}).get("hosts")
    if not path:
        raise ConfigError("config [paths].hosts must name the host file")
    if not os.path.exists(path):
        raise ConfigError(f"host file {path} does not exist")
    return hosts.load_hosts(path)


def _labeled_dataset(cfg, sets, tree):
    """Dataset with labels assigned from the region layers; unassignable
    hosts keep labels None."""
    records = _load_host_records(cfg)
    for rec in records:
        rec.labels = regions.assign_labels(rec.coord, sets, tree)
    return hosts.Dataset(records)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    s = cfg.get("synth", {})
    seed = args.seed if args.seed is not None else s.get("seed", 17)
    world = synthetic.generate_synthetic(
        out_dir=_out_dir(args),
        sizes=s.get("sizes", [4, 12, 36]),
        clusters=s.get("clusters", 60),
        hosts_per_cluster=s.get("hosts_per_cluster", 30),
        feature_noise=s.get("feature_noise", 0.1),
        seed=seed,
        noise_dims=s.get("noise_dims", 4))
    print(f"wrote {len(world.region_paths)} region layers, hosts to {world.hosts_path}")
    return 0


def cmd_map_regions(args, cfg):
    sets = _load_region_sets(cfg)
    tree = regions.build_hierarchy(sets)
    dataset = _labeled_dataset(cfg, sets, tree)
    out = os.path.join(_out_dir(args), "labeled_hosts.jsonl")
    unassignable = 0
    with open(out, "w") as fh:
        for rec in dataset.hosts:
            row = {"ip": rec.ip, "last_hop": rec.last_hop}
            if rec.labels is None:
                unassignable += 1
                row["unassignable"] = True
            else:
                row["path"] = [int(v) for v in rec.labels.per_granularity]
            fh.write(json.dumps(row) + "\n")
    print(f"labeled {len(dataset) - unassignable}/{len(dataset)} hosts -> {out}")
    return 0


def cmd_build_hierarchy(args, cfg):
    sets = _load_region_sets(cfg)
    tree = regions.build_hierarchy(sets)
    out = _out_dir(args)
    edges = os.path.join(out, "hierarchy_edges.csv")
    meta = os.path.join(out, "hierarchy_meta.json")
    tree.export(edges, meta)
    print(f"hierarchy sizes {tree.granularity_sizes} -> {edges}")
    return 0


def cmd_cluster_hosts(args, cfg):
    records = _load_host_records(cfg)
    clusters = hosts.cluster_by_last_hop(records)
    out = os.path.join(_out_dir(args), "clusters.csv")
    with open(out, "w") as fh:
        fh.write("ip,last_hop\n")
        for key in sorted(clusters.clusters):
            for i in clusters.clusters[key]:
                fh.write(f"{records[i].ip},{key}\n")
    print(f"{len(clusters.clusters)} clusters, {len(clusters.rejected)} rejected -> {out}")
    return 0


def _train_config(args, cfg):
    t = dict(cfg.get("train", {}))
    ratio = t.pop("ratio", 0.8)
    if args.seed is not None:
        t["seed"] = args.seed
    return training.TrainConfig(**t), ratio


def cmd_train(args, cfg):
    sets = _load_region_sets(cfg)
    tree = regions.build_hierarchy(sets)
    dataset = _labeled_dataset(cfg, sets, tree)
    tcfg, ratio = _train_config(args, cfg)
    hosts.split_train_test(dataset.hosts, ratio, tcfg.seed)
    scaler = hosts.standardize_features(
        [dataset[i] for i in dataset.indices("train")])
    scaler.apply(dataset.hosts)

    params, history = training.train(dataset, tree, tcfg)
    params.meta["scaler"] = {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()}
    out = _out_dir(args)
    hosts.export_split(dataset.hosts, os.path.join(out, "split.csv"))
    params.save(os.path.join(out, "checkpoint.json"))
    training.write_history(history, os.path.join(out, "history.csv"))
    last = history[-1]
    print(f"epoch {last['epoch']}: Loss {last['Loss']:.4f}, "
          f"leaf acc {last[f'acc_g{tree.levels}']:.4f}")
    return 0


def cmd_predict(args, cfg):
    sets = _load_region_sets(cfg)
    tree = regions.build_hierarchy(sets)
    ckpt = cfg.get("paths", {}).get("checkpoint", os.path.join(args.out or ".", "checkpoint.json"))
    if not os.path.exists(ckpt):
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    params = ParamStore.load(ckpt)
    model_cfg = model.ModelConfig.from_dict(params.meta["config"])
    if model_cfg.granularity_sizes != tree.granularity_sizes:
        raise SchemaError(
            f"checkpoint granularity sizes {model_cfg.granularity_sizes} "
            f"do not match region layers {tree.granularity_sizes}")

    dataset = _labeled_dataset(cfg, sets, tree)
    split_path = cfg.get("paths", {}).get("split", os.path.join(args.out or ".", "split.csv"))
    if os.path.exists(split_path):
        hosts.apply_split(dataset.hosts, split_path)
    scaler_meta = params.meta.get("scaler")
    if scaler_meta:
        hosts.FeatureScaler(np.array(scaler_meta["mean"]),
                            np.array(scaler_meta["std"])).apply(dataset.hosts)

    k_max = max(cfg.get("eval", {}).get("k", [1, 2, 3]))
    targets = dataset.indices("test") or dataset.indices()
    fused_rows = training.predict_indices(params, model_cfg, dataset, tree, targets)
    fallback = model.modal_train_path(dataset, tree)
    out = os.path.join(_out_dir(args), "predictions.jsonl")
    with open(out, "w") as fh:
        for i in targets:
            rec = dataset[i]
            row = {"ip": rec.ip, "fallback": fused_rows[i] is None, "granularities": []}
            if fused_rows[i] is None:
                topk = [[rid] for rid in fallback.per_granularity]
                scores = None
            else:
                topk = model.predict_topk(fused_rows[i], tree, k_max)
                scores = fused_rows[i]
            for g in range(tree.levels):
                entries = []
                for rid in topk[g]:
                    entry = {"id": int(rid), "name": sets[g][rid].name}
                    if scores is not None:
                        entry["score"] = float(scores[tree.level_slice(g)][rid])
                    entries.append(entry)
                row["granularities"].append({"level": g + 1, "topk": entries})
            fh.write(json.dumps(row) + "\n")
    print(f"predicted {len(targets)} targets -> {out}")
    return 0


def cmd_evaluate(args, cfg):
    sets = _load_region_sets(cfg)
    tree = regions.build_hierarchy(sets)
    dataset = _labeled_dataset(cfg, sets, tree)
    dataset.lock_test_labels = False
    by_ip = {rec.ip: rec for rec in dataset.hosts}

    pred_path = cfg.get("paths", {}).get(
        "predictions", os.path.join(args.out or ".", "predictions.jsonl"))
    if not os.path.exists(pred_path):
        raise ConfigError(f"predictions file {pred_path} does not exist")
    with open(pred_path) as fh:
        preds = [json.loads(line) for line in fh if line.strip()]
    for row in preds:
        if row["ip"] not in by_ip:
            raise SchemaError(f"prediction for unknown ip {row['ip']}")

    k_list = sorted(cfg.get("eval", {}).get("k", [1, 2, 3]))
    levels = tree.levels
    report = metrics.MetricsReport(per_granularity=[])
    unassignable = 0
    topk_ids = [[] for _ in range(levels)]  # per level: list of id lists
    truths = [[] for _ in range(levels)]
    leaf_topk, coords = [], []
    for row in preds:
        rec = by_ip[row["ip"]]
        if rec.labels is None:
            unassignable += 1
            continue
        for g in range(levels):
            ids = [e["id"] for e in row["granularities"][g]["topk"]]
            topk_ids[g].append(ids)
            truths[g].append(rec.labels.per_granularity[g])
        leaf_topk.append([e["id"] for e in row["granularities"][levels - 1]["topk"]])
        coords.append(rec.coord)

    total = len(preds)
    for g in range(levels):
        p1 = [ids[0] for ids in topk_ids[g]]
        acc, mp, mr, mf = metrics.confusion_metrics(p1, truths[g], tree.granularity_sizes[g])
        # unassignable targets count as automatic misses in accuracy
        acc = acc * len(p1) / total if total else 0.0
        report.per_granularity.append(
            {"accuracy": acc, "macro_precision": mp, "macro_recall": mr, "macro_f1": mf})
    for k in k_list:
        report.topk[k] = [
            metrics.topk_accuracy([ids[:k] for ids in topk_ids[g]], truths[g]) *
            (len(topk_ids[g]) / total if total else 0.0)
            for g in range(levels)]

    out = _out_dir(args)
    for k in k_list:
        samples, excluded = metrics.error_cdf(leaf_topk, coords, sets[-1], k)
        report.error_medians[k] = float(np.median(samples)) if len(samples) else None
        metrics.write_cdf_csv(samples, os.path.join(out, f"cdf_k{k}.csv"))
    report.excluded = unassignable
    report.save_json(os.path.join(out, "metrics.json"))
    report.save_csv(os.path.join(out, "metrics.csv"))
    print(f"evaluated {total} targets ({unassignable} unassignable) -> metrics.json")
    return 0


def cmd_analyze(args, cfg):
    records = _load_host_records(cfg)
    a = cfg.get("analysis", {})
    eps = a.get("eps_km", 0.3)
    min_samples = a.get("min_samples", 3)
    clusters = hosts.cluster_by_last_hop(records)
    batches = [(key, np.array([records[i].coord for i in clusters.clusters[key]]))
               for key in sorted(clusters.clusters)]
    report = analysis.batch_statistics(batches, eps, min_samples)
    out = _out_dir(args)
    report.save_csv(os.path.join(out, "cluster_table.csv"),
                    os.path.join(out, "cluster_batches.csv"))
    total = report.aggregates["Total"]
    print(f"{total['batches']} batches, clustered fraction "
          f"{total['clustered_fraction']:.2f} -> cluster_table.csv")
    return 0


def cmd_grad_check(args, cfg):
    from .autodiff import grad_check
    from .regions import HierarchyTree

    seed = args.seed if args.seed is not None else 0
    sizes = [2, 3, 5]
    parents = [None, np.array([0, 0, 1], dtype=np.intp),
               np.array([0, 0, 1, 1, 2], dtype=np.intp)]
    overlap = np.eye(sum(sizes), dtype=bool)
    tree = HierarchyTree(granularity_sizes=sizes, parents=parents, overlap=overlap)
    rng = np.random.default_rng(seed)
    cfgm = model.ModelConfig(input_dim=6, hidden_dim=16, granularity_sizes=sizes,
                             alpha=0.4)
    params = model.build_params(cfgm, seed)
    X_l = rng.normal(size=(4, 6))
    X_t = rng.normal(size=(2, 6))
    paths = np.array([[0, 0, 0], [0, 1, 2], [1, 2, 3], [1, 2, 4]], dtype=np.intp)
    truth = np.array([[0, 1, 2], [1, 2, 4]], dtype=np.intp)
    loss_cfg = losses.LossConfig(beta=0.5, lambda_g=[1.0, 1.0, 1.0])

    def fn(store):
        _, _, fused = model.forward(store, cfgm, X_l, paths, tree, X_t=X_t)
        return losses.composite_loss(fused, truth, tree, loss_cfg)

    err = grad_check(fn, params, h=1e-5, seed=seed)
    print(f"max relative gradient error: {err:.3e}")
    if err >= args.tol:
        raise NumericError(f"gradient check failed: {err:.3e} >= {args.tol}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit 1 per the contract
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="hiergeo",
                     description="Hierarchical multi-granularity region prediction")
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: .)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        if name == "grad-check":
            p.add_argument("--tol", type=float, default=1e-4)
    return parser


COMMANDS = {
    "map-regions": cmd_map_regions,
    "build-hierarchy": cmd_build_hierarchy,
    "cluster-hosts": cmd_cluster_hosts,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "grad-check": cmd_grad_check,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, GeometryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
