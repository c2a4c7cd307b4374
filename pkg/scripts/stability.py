"""Steps-to-divergence for the baseline MiT and its stabilising variants.

    python3 scripts/stability.py --config configs/stability.json --seeds 0 1 2
"""
import argparse
from dataclasses import replace

from flowscreen import config as C
from flowscreen import experiments as X


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/stability.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--lr", type=float, nargs="*", help="sweep these learning rates instead of the configured one")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = C.load(args.config, {"out": args.out})
    for lr in args.lr or [cfg.train.lr]:
        run_cfg = replace(cfg, train=replace(cfg.train, lr=lr))
        out = f"{cfg.out}/lr{lr:g}" if args.lr else cfg.out
        runs = X.run_stability(run_cfg, X.stability_variants(X.mit_config(run_cfg)), args.seeds, out)
        steps = X.mean_steps(runs)
        print(f"lr={lr:g} " + " ".join(f"{k}={v:.1f}" for k, v in steps.items())
              + f"  (cap {run_cfg.train.steps + 1}) -> {out}/stability.csv")


if __name__ == "__main__":
    main()
