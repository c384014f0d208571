"""``diffractive`` command line: rank, basisgen, train, eval, report, gen-dataset."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import experiments as ex
from .config import echo, load_config
from .errors import ConfigError, DiffractiveError
from .io import load_checkpoint, save_checkpoint, write_records

COMMANDS = ("rank", "basisgen", "train", "eval", "report", "gen-dataset")
DEFAULT_CONFIGS = {"rank": "rank_law_small", "basisgen": "basisgen_table1",
                   "train": "desk_k1", "eval": "desk_k1", "gen-dataset": "dataset_desk"}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def cmd_rank(cfg, out: Path, args) -> int:
    records = ex.run_rank(cfg)
    write_records(out / "rank.jsonl", records)
    bad = ex.rank_failures(records)
    for r in records:
        p = r.payload
        print(f"case {p['case']:2d} n_fov={p['n_fov']} layers={p['layer_sizes']} "
              f"predicted={p['predicted']} estimated={p['estimated_per_geometry']} "
              f"{'ok' if p['matches'] else 'MISMATCH'}")
    return 1 if bad else 0


def cmd_basisgen(cfg, out: Path, args) -> int:
    records = ex.run_basisgen(cfg)
    write_records(out / "basisgen.jsonl", records)
    bad = [r for r in records if r.payload["steps"] != r.payload["expected_steps"]
           or r.payload["consumed"] != r.payload["expected_consumed"]
           or r.payload["residual"] >= 1e-12]
    print(f"{len(records)} orders, {len(bad)} failing")
    return 1 if bad else 0


def cmd_train(cfg, out: Path, args) -> int:
    def show(rec):
        print(f"epoch {rec['epoch']:3d} loss {rec['mean_loss']:.4f} "
              f"train acc {rec['train_accuracy']:.3f} ({rec['wall_time']:.1f} s)")

    net, epochs, ev = ex.run_train(cfg, args.cifar, show)
    save_checkpoint(out / "checkpoint.json", net, echo(cfg))
    write_records(out / "history.jsonl", epochs)
    write_records(out / "metrics.jsonl", [ev])
    _write_json(out / "config.json", echo(cfg))
    print(f"test accuracy {ev.payload['accuracy']:.4f}")
    return 0


def cmd_eval(cfg, out: Path, args) -> int:
    ck = out / "checkpoint.json"
    if not ck.exists():
        raise ConfigError(f"no checkpoint at {ck}; run train with the same --out first")
    net, saved = load_checkpoint(ck)
    if saved is not None and saved != echo(cfg):
        raise ConfigError(f"{ck} was trained with a different configuration")
    ev = ex.run_eval(cfg, net, args.cifar)
    write_records(out / "metrics.jsonl", [ev])
    print(json.dumps({k: ev.payload[k] for k in ("accuracy", "efficiency", "contrast")}))
    return 0


def cmd_report(cfg, out: Path, args) -> int:
    for name, path in ex.run_report(cfg, out).items():
        print(f"{name}: {path}")
    return 0


def cmd_gen_dataset(cfg, out: Path, args) -> int:
    manifest = ex.run_gen_dataset(cfg, args.cifar)
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'manifest.json'}")
    return 0


HANDLERS = {"rank": cmd_rank, "basisgen": cmd_basisgen, "train": cmd_train, "eval": cmd_eval,
            "report": cmd_report, "gen-dataset": cmd_gen_dataset}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffractive", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default=DEFAULT_CONFIGS.get(name),
                       required=name not in DEFAULT_CONFIGS,
                       help="config file or bundled config name")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
        s.add_argument("--cifar", default=None, help="CIFAR-10 binary batch file or directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        with threadpool_limits(limits=args.threads):
            return HANDLERS[args.command](cfg, Path(args.out), args)
    except (DiffractiveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
