"""Experiment drivers behind the command-line subcommands.

Each driver takes a validated config and returns report records (and, for
training, the trained network). Writing files is left to the caller.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import capacity
from .config import (BasisgenConfig, DatasetConfig, DatasetExperimentConfig, NetworkConfig,
                     RankConfig, ReportConfig, TrainExperimentConfig, echo)
from .data import (Dataset, DatasetSpec, cifar_dataset, default_cifar_path, gen_class_map,
                   make_detector_layout, make_spatial_dataset)
from .errors import ConfigError, MissingRecords
from .field import ApertureMap, GridSpec
from .io import ReportRecord, read_records
from .learn import TrainConfig, evaluate, train
from .network import NetworkSpec, lattice_registered


# --- rank and basis generation ---------------------------------------------------------------


def run_rank(cfg: RankConfig) -> list[ReportRecord]:
    """One record per case; every geometry of a case must match the law."""
    conf = echo(cfg)
    records = []
    for ci, case in enumerate(cfg.cases):
        trials = []
        for g in range(cfg.geometries):
            seed = [cfg.seed, ci, g]
            rep, net, attempts = capacity.rank_case(
                case.n_fov, case.layer_sizes, seed, case.equal_distances, case.distance,
                cfg.rtol, cfg.min_gap, cfg.max_resample, distance_range=case.distance_range)
            trials.append({"geometry": g, "attempts": attempts,
                           "distances": list(net.distances), **rep.to_dict()})
        predicted = trials[0]["predicted_rank"]
        ranks = [t["estimated_rank"] for t in trials]
        bad = [r for r in ranks if r != predicted]
        records.append(ReportRecord("rank", {
            "case": ci,
            "n_fov": case.n_fov,
            "K": len(case.layer_sizes),
            "layer_sizes": list(case.layer_sizes),
            "sum_neurons": int(sum(case.layer_sizes)),
            "equal_distances": case.equal_distances,
            "predicted": predicted,
            "estimated": bad[0] if bad else predicted,
            "estimated_per_geometry": ranks,
            "matches": not bad,
            "trials": trials,
        }, conf))
    return records


def rank_failures(records) -> list[ReportRecord]:
    return [r for r in records if r.kind == "rank" and not r.payload["matches"]]


def run_basisgen(cfg: BasisgenConfig) -> list[ReportRecord]:
    conf = echo(cfg)
    records = []
    for ci, case in enumerate(cfg.cases):
        n1, n2 = case.n_l1, case.n_l2
        n_h = case.n_h or n1 * n2 + 1
        for o in range(cfg.orders):
            rng = np.random.default_rng([cfg.seed, ci, o])
            h = rng.normal(size=(n_h, n1 * n2)) + 1j * rng.normal(size=(n_h, n1 * n2))
            t1 = capacity.sample_disk(rng, n1)
            t2 = capacity.sample_disk(rng, n2)
            rep = capacity.generate_basis(t1, t2, h, rng)
            target = capacity.direct_combination(rep.t1, rep.t2, h)
            resid = np.linalg.norm(rep.reconstruct() - target) / np.linalg.norm(target)
            stacked = np.stack([s.basis for s in rep.steps], axis=1)
            records.append(ReportRecord("basisgen", {
                "case": ci, "order": o, "n_l1": n1, "n_l2": n2,
                "steps": len(rep.steps),
                "expected_steps": n1 + n2 - 1,
                "consumed": rep.consumed_h_count,
                "expected_consumed": n1 * n2,
                "consumed_from_chunks": capacity.consumed_from_chunks(
                    n1, n2, rep.chunk_lengths, rep.first_chunk_layer),
                "chunk_lengths": list(rep.chunk_lengths),
                "first_chunk_layer": rep.first_chunk_layer,
                "residual": float(resid),
                "basis_rank": int(np.linalg.matrix_rank(stacked)),
            }, conf))
    return records


# --- datasets and networks ----------------------------------------------------------------


def build_network(ncfg: NetworkConfig, seed) -> NetworkSpec:
    """Desk-style network: every plane centred on the optical axis."""
    p = ncfg.pitch
    inp = GridSpec(*ncfg.input_shape, pitch=p)
    out = GridSpec(*ncfg.output_shape, pitch=p)
    shapes = [tuple(s) for s in ncfg.layer_shapes]
    host = GridSpec(*max(shapes, key=lambda s: s[0] * s[1]), pitch=p)
    layers = [lattice_registered(s, host) for s in shapes]
    return NetworkSpec.build(inp, out, layers, ncfg.distances, ncfg.mode, seed, ncfg.form)


def detector_layout(ncfg: NetworkConfig, classes: int):
    out = ApertureMap.full(GridSpec(*ncfg.output_shape, pitch=ncfg.pitch))
    return make_detector_layout(ncfg.detectors, out, classes)


def _cifar_path(dcfg: DatasetConfig, override: str | None) -> str:
    path = override or dcfg.cifar_path or default_cifar_path()
    if not path:
        raise ConfigError("CIFAR-10 path required: pass --cifar, set dataset.cifar_path, "
                          "or set DIFFRACTIVE_CIFAR10")
    if not Path(path).exists():
        raise FileNotFoundError(f"CIFAR-10 archive not found at {path}")
    return path


def cifar_splits(path, dcfg: DatasetConfig, aperture_shape, seed) -> tuple[Dataset, Dataset]:
    """Train/test subsets; a directory with test_batch.bin supplies the test split."""
    p = Path(path)
    test_file = p / "test_batch.bin" if p.is_dir() else None
    block = max(1, aperture_shape[0] // 32)
    if test_file is not None and test_file.exists():
        trains = sorted(p.glob("data_batch_*.bin")) or [test_file]
        tr = _concat([cifar_dataset(f, dcfg.cifar_classes, None, block, aperture_shape)
                      for f in trains])
        te = cifar_dataset(test_file, dcfg.cifar_classes, None, block, aperture_shape)
        rng = np.random.default_rng([seed, 2])
        tr = tr.subset(np.sort(rng.permutation(len(tr))[:dcfg.train_count]))
        te = te.subset(np.sort(rng.permutation(len(te))[:dcfg.test_count]))
        return tr, te
    full = cifar_dataset(path, dcfg.cifar_classes, None, block, aperture_shape)
    order = np.random.default_rng([seed, 2]).permutation(len(full))
    n_tr = min(dcfg.train_count, len(full) // 2)
    return (full.subset(np.sort(order[:n_tr])),
            full.subset(np.sort(order[n_tr:n_tr + dcfg.test_count])))


def _concat(parts: list[Dataset]) -> Dataset:
    return Dataset(np.hstack([d.inputs for d in parts]),
                   np.concatenate([d.labels for d in parts]), parts[0].classes)


def build_datasets(cfg: TrainExperimentConfig | DatasetExperimentConfig, cifar: str | None = None,
                   input_shape=None) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "cifar10":
        shape = input_shape or (32, 32)
        return cifar_splits(_cifar_path(d, cifar), d, shape, cfg.seed)
    common = dict(fov_cells=tuple(d.fov_cells), classes=d.classes, fraction=d.fraction,
                  seed=cfg.seed, block=d.block, map_seed=d.map_seed)
    return (make_spatial_dataset(DatasetSpec(count=d.train_count, split="train", **common)),
            make_spatial_dataset(DatasetSpec(count=d.test_count, split="test", **common)))


def train_config(cfg: TrainExperimentConfig) -> TrainConfig:
    return TrainConfig(seed=cfg.seed, **cfg.train.model_dump())


def run_train(cfg: TrainExperimentConfig, cifar: str | None = None, callback=None):
    """Train and evaluate; returns (network, epoch records, eval record)."""
    conf = echo(cfg)
    tr, te = build_datasets(cfg, cifar, cfg.network.input_shape)
    net = build_network(cfg.network, cfg.seed)
    if tr.inputs.shape[0] != net.n_in:
        raise ConfigError(f"dataset fields have {tr.inputs.shape[0]} cells but the input "
                          f"aperture has {net.n_in}")
    layout = detector_layout(cfg.network, cfg.dataset.classes)
    net, history = train(net, tr, layout, train_config(cfg), callback)
    epochs = [ReportRecord("train-epoch", h, conf) for h in history]
    return net, epochs, eval_record(net, te, layout, conf)


def eval_record(net, data: Dataset, layout, conf: dict) -> ReportRecord:
    m = evaluate(net, data, layout)
    return ReportRecord("eval", {
        "accuracy": m.accuracy,
        "efficiency": m.mean_efficiency,
        "contrast": m.mean_contrast,
        "count": m.count,
        "undefined_contrast": m.undefined_contrast,
        "per_class": m.per_class,
    }, conf)


def run_eval(cfg: TrainExperimentConfig, net: NetworkSpec, cifar: str | None = None) -> ReportRecord:
    _, te = build_datasets(cfg, cifar, cfg.network.input_shape)
    return eval_record(net, te, detector_layout(cfg.network, cfg.dataset.classes), echo(cfg))


def run_gen_dataset(cfg: DatasetExperimentConfig, cifar: str | None = None) -> dict:
    """Dataset manifest. Samples are regenerated from (spec, seed), never stored."""
    tr, te = build_datasets(cfg, cifar)
    d = cfg.dataset
    splits = {}
    for name, ds in (("train", tr), ("test", te)):
        splits[name] = {"count": len(ds), "checksum_first_10": ds.checksum(10),
                        "class_counts": np.bincount(ds.labels, minlength=ds.classes).tolist()}
    manifest = {
        "kind": d.kind,
        "geometry": {"fov_cells": list(d.fov_cells), "block": d.block,
                     "aperture_cells": list(tr.inputs.shape[:1])},
        "fractions": [d.fraction] if d.kind == "spatial-code" else [],
        "seed": cfg.seed,
        "splits": splits,
        "config": echo(cfg),
    }
    if d.kind == "spatial-code":
        manifest["class_map"] = gen_class_map(tuple(d.fov_cells), d.classes,
                                              d.map_seed).assignment.tolist()
    return manifest


# --- report tables --------------------------------------------------------------------------


RANK_COLUMNS = ["n_fov", "K", "sum_neurons", "predicted", "estimated"]
ACCURACY_COLUMNS = ["K", "mode", "layer_neurons", "seed", "accuracy", "config_digest"]
EFFICIENCY_COLUMNS = ["K", "mode", "layer_neurons", "seed", "efficiency", "contrast",
                      "config_digest"]


def collect_tables(records) -> dict[str, list[dict]]:
    """Join records by config digest into flat per-figure tables.

    Every eval record needs training records with the same digest and vice
    versa; unmatched digests raise :class:`MissingRecords`.
    """
    by_digest = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_digest[r.config_digest][r.kind].append(r)
    orphans = []
    for dg, kinds in by_digest.items():
        if bool(kinds.get("eval")) != bool(kinds.get("train-epoch")):
            orphans.append(dg)
    if orphans:
        raise MissingRecords(f"{len(orphans)} config digest(s) lack matching train/eval records",
                             orphans)
    rank_rows, acc_rows, eff_rows = [], [], []
    for dg, kinds in by_digest.items():
        for r in kinds.get("rank", []):
            rank_rows.append({c: r.payload[c] for c in RANK_COLUMNS})
        for r in kinds.get("eval", []):
            net = r.config["network"]
            base = {"K": len(net["layer_shapes"]), "mode": net["mode"],
                    "layer_neurons": sum(a * b for a, b in net["layer_shapes"]),
                    "seed": r.config["seed"], "config_digest": dg}
            acc_rows.append({**base, "accuracy": r.payload["accuracy"]})
            eff_rows.append({**base, "efficiency": r.payload["efficiency"],
                             "contrast": r.payload["contrast"]})
    key = lambda row: (row["K"], row["mode"], row["layer_neurons"], row["seed"])
    return {
        "rank_vs_k": sorted(rank_rows, key=lambda r: (r["n_fov"], r["K"], r["sum_neurons"])),
        "accuracy_vs_k": sorted(acc_rows, key=key),
        "efficiency_contrast_vs_k": sorted(eff_rows, key=key),
    }


def run_report(cfg: ReportConfig, out: Path) -> dict[str, Path]:
    records = []
    for p in cfg.inputs:
        p = Path(p)
        files = sorted(p.rglob("*.jsonl")) if p.is_dir() else [p]
        for f in files:
            records.extend(read_records(f))
    tables = collect_tables(records)
    columns = {"rank_vs_k": RANK_COLUMNS, "accuracy_vs_k": ACCURACY_COLUMNS,
               "efficiency_contrast_vs_k": EFFICIENCY_COLUMNS}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, rows in tables.items():
        if not rows:
            continue
        f = out / f"{name}.csv"
        with open(f, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns[name])
            w.writeheader()
            w.writerows(rows)
        written[name] = f
    return written
