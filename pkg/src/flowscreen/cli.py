"""Command-line entry point: ``flowscreen <command> --config run.json``.

Exit codes: 0 success, 2 config error, 3 divergence, 4 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, config as C, experiments as X
from .coupling import DataError, FlowKind
from .data import ContractError, FormatError, estimate_train_flops, read_tensor, write_manifest, write_tensor
from .metrics import evaluate, make_extractor
from .models import XL2, count_params_flops, mit_counts
from .sampling import SolverStats, StiffnessError, write_stats_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DATA = 0, 2, 3, 4
log = logging.getLogger("flowscreen")


def _config(args) -> C.RunConfig:
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "guidance", None):
        overrides["guidance"] = args.guidance
    if args.config:
        cfg = C.load(args.config, overrides)
    else:
        cfg = C.from_dict({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "mode", None):
        cfg = replace(cfg, sample=replace(cfg.sample, mode=args.mode))
    return cfg


def cmd_train(cfg: C.RunConfig) -> int:
    run = X.train_run(cfg, cfg.out)
    rep = run.result.report
    if rep.diverged:
        print(f"diverged at step {rep.step}: {rep.reason}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {cfg.train.steps} steps, final loss {rep.final_loss:.5g} -> {cfg.out}")
    return EXIT_OK


def _checkpoint(cfg: C.RunConfig):
    path = Path(cfg.sample.checkpoint or Path(cfg.out) / ("model_ema.ckpt" if cfg.sample.use_ema else "model.ckpt"))
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    model, _ = checkpoint.load(path)
    return model


def cmd_sample(cfg: C.RunConfig) -> int:
    model = _checkpoint(cfg)
    spec = X.build_screen(cfg)
    _, eval_pool = X.pools(cfg, spec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, sid = [], 0
    for w in cfg.guidance:
        for p, e in X.eval_conditions(spec):
            s = X.sample_condition(model, FlowKind(cfg.flow.kind), cfg.sample.mode, p, e,
                                   cfg.sample.n_per_condition, w, X.solver(cfg), eval_pool,
                                   X.condition_rng(cfg.seed, 4, p, e))
            write_tensor(out / f"samples_w{w:g}_p{p}_e{e}.flt", s.samples)
            rows.append((sid, SolverStats(nfe=s.nfe)))
            sid += 1
    write_stats_csv(out / "sample_stats.csv", rows, cfg.hash())
    print(f"wrote {sid} sample files to {out}")
    return EXIT_OK


EVAL_HEADER = ["generated", "reference", "frechet", "kid", "kid_scaled", "mmd_rbf", "n_real", "n_gen",
               "shrinkage", "config_hash"]


def cmd_eval(cfg: C.RunConfig, generated: list[str]) -> int:
    if not cfg.sample.reference:
        raise C.ConfigError("eval needs sample.reference (a tensor file)", ["sample.reference"])
    ref = read_tensor(cfg.sample.reference)
    rows = []
    for path in generated or [cfg.sample.reference]:
        gen = read_tensor(path)
        if gen.shape[1:] != ref.shape[1:]:
            raise ContractError(f"{path}: sample shape {gen.shape[1:]} != reference {ref.shape[1:]}")
        ext = make_extractor(cfg.metrics.extractor, int(np.prod(ref.shape[1:])), cfg.metrics.dim, cfg.seed)
        r = evaluate(ref, gen, ext, cfg.metrics.bandwidth)
        rows.append([path, cfg.sample.reference] + r.csv_row() + [cfg.hash()])
        print(r.to_text(), end="")
    X.write_csv(Path(cfg.out) / "eval.csv", EVAL_HEADER, rows)
    return EXIT_OK


def cmd_ablate(cfg: C.RunConfig) -> int:
    cells = X.run_ablation(cfg, cfg.out)
    for c in cells:
        print(f"{c.config} w={c.guidance:g} mmd={c.summary.mmd:.5f} nfe={c.summary.mean_nfe:.1f}")
    return EXIT_OK


def cmd_adaptor(cfg: C.RunConfig) -> int:
    o = X.run_adaptor(cfg, cfg.out)
    print(f"seen mmd={o.seen.mmd:.5f} unseen mmd={o.unseen.mmd:.5f} unconditional mmd={o.unconditional.mmd:.5f}")
    return EXIT_OK


def cmd_bound_check(cfg: C.RunConfig) -> int:
    recs = X.run_bound_check(cfg, cfg.out)
    frac = float(np.mean([r.holds for r in recs]))
    print(f"holds-fraction {frac:.3f} over {len(recs)} instances")
    return EXIT_OK


FLOPS_HEADER = ["model", "params", "cond_params", "flops_per_image", "attention_flops", "batch", "steps",
                "exaflops", "config_hash"]


def cmd_flops(cfg: C.RunConfig) -> int:
    batch, steps = cfg.train.batch, cfg.train.steps
    rows = [[f"configured_{cfg.model.kind}", *count_params_flops(X.build_velocity(cfg)), batch, steps]]
    rows.append(["XL/2@96x96x6", *mit_counts(XL2, 6, 96), batch, steps])
    out = []
    for name, params, cond, flops, attn, b, s in rows:
        ex = estimate_train_flops(flops, b, s)
        out.append([name, params, cond, flops, attn, b, s, repr(ex), cfg.hash()])
        print(f"{name}: params={params} flops/img={flops:.4g} (+attn {attn:.3g}) -> {ex:.4g} EF")
    X.write_csv(Path(cfg.out) / "flops.csv", FLOPS_HEADER, out)
    return EXIT_OK


COMMANDS = ["train", "sample", "eval", "ablate", "adaptor", "bound-check", "flops"]


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowscreen", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--guidance", type=float, action="append", default=None)
        p.add_argument("--mode", choices=["generate", "counterfactual"], default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("generated", nargs="*")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        write_manifest(Path(cfg.out) / f"{args.command}_config.json",
                       {"command": args.command, "config": cfg.to_dict(), "config_hash": cfg.hash()})
        handler = {
            "train": cmd_train, "sample": cmd_sample, "ablate": cmd_ablate, "adaptor": cmd_adaptor,
            "bound-check": cmd_bound_check, "flops": cmd_flops,
        }.get(args.command)
        return handler(cfg) if handler else cmd_eval(cfg, args.generated)
    except C.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as err:
        if isinstance(err, (FormatError, ContractError)):
            print(f"data error: {err}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except StiffnessError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
