"""Adaptor on informative vs uninformative perturbation features."""
import argparse

from flowscreen import config as C
from flowscreen import experiments as X


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="*", default=["configs/adaptor_informative.json", "configs/adaptor_random.json"])
    args = ap.parse_args()
    for path in args.configs:
        cfg = C.load(path)
        o = X.run_adaptor(cfg, cfg.out)
        diff, se = o.paired_difference()
        print(f"{cfg.data.phi_kind:12s} seen {o.seen.mmd:.4f}  unseen {o.unseen.mmd:.4f}  "
              f"unconditional {o.unconditional.mmd:.4f}  unseen/seen {o.unseen.mmd / o.seen.mmd:.2f}  "
              f"unseen-uncond {diff:+.4f} +- {se:.4f}  -> {cfg.out}/adaptor.csv")


if __name__ == "__main__":
    main()
