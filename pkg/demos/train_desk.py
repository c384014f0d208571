"""Train small diffractive classifiers on the spatial-code task and compare depths.

Uses the bundled desk configurations with fewer epochs so the whole script
finishes in a few minutes. Pass --epochs to change that.
"""
import argparse

from diffractive.config import echo, load_config, parse_config
from diffractive.experiments import run_train

p = argparse.ArgumentParser()
p.add_argument("--epochs", type=int, default=3)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

print(f"{'config':18s} {'acc':>6s} {'eff':>6s} {'contrast':>9s}")
for name in ("desk_k1", "desk_k2", "desk_k3", "desk_wide", "desk_k2_complex"):
    conf = echo(load_config("train", name, seed=args.seed))
    conf["train"]["epochs"] = args.epochs
    cfg = parse_config("train", conf)
    _, _, ev = run_train(cfg)
    m = ev.payload
    print(f"{name:18s} {m['accuracy']:6.3f} {m['efficiency']:6.3f} {m['contrast']:9.3f}")
