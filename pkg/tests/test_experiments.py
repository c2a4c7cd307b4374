import csv
import json
from pathlib import Path

import numpy as np
import pytest

from flowscreen import config as C
from flowscreen import experiments as X
from flowscreen.cli import main
from flowscreen.coupling import DataError
from flowscreen.data import read_tensor, tensor_bytes, write_tensor


def write_config(path: Path, raw: dict) -> str:
    path.write_text(json.dumps(raw))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


SMALL = {"data": {"n_pert": 3, "n_ctx": 2, "n_train_per": 50, "n_eval_per": 60},
         "model": {"hidden": 32}, "train": {"steps": 40, "batch": 32, "lr": 1e-3},
         "sample": {"n_per_condition": 20}}


def test_unknown_keys_are_listed():
    with pytest.raises(C.ConfigError) as info:
        C.from_dict({"seed": 1, "trian": {}, "data": {"dimm": 3}})
    assert info.value.keys == ["trian"]
    with pytest.raises(C.ConfigError) as info:
        C.from_dict({"data": {"dimm": 3}})
    assert info.value.keys == ["data.dimm"]


def test_hash_is_stable_and_sensitive():
    a, b = C.from_dict({"seed": 3}), C.from_dict({"seed": 3})
    assert a.hash() == b.hash() and len(a.hash()) == 16
    assert C.from_dict({"seed": 4}).hash() != a.hash()


def test_load_applies_overrides(tmp_path):
    cfg = C.load(write_config(tmp_path / "c.json", {"seed": 1, "out": "x"}), {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.out == "x"
    with pytest.raises(C.ConfigError):
        C.load(tmp_path / "missing.json")


def test_cli_config_errors(tmp_path):
    bad = write_config(tmp_path / "bad.json", {"train": {"stepz": 3}})
    assert main(["train", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["launch"]) == 2
    bad_value = write_config(tmp_path / "lr.json", {"train": {"lr": -1}})
    assert main(["train", "--config", bad_value, "--out", str(tmp_path / "o2")]) == 2


def test_cli_train_smoke_and_determinism(tmp_path):
    cfg = write_config(tmp_path / "c.json", SMALL)
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["train", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
        for name in ("model.ckpt", "model_ema.ckpt", "loss.csv", "manifest.json", "train_config.json"):
            assert (out / name).exists()
        digests.append([(out / n).read_bytes() for n in ("model.ckpt", "model_ema.ckpt", "loss.csv")])
    assert digests[0] == digests[1]
    rows = read_csv(tmp_path / "run0" / "loss.csv")
    manifest = json.loads((tmp_path / "run0" / "manifest.json").read_text())
    assert rows[1][-1] == manifest["config_hash"]


def test_cli_sample_and_eval(tmp_path):
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "c.json", SMALL)
    assert main(["sample", "--config", cfg, "--out", str(out)]) == 4  # no checkpoint yet
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert main(["sample", "--config", cfg, "--out", str(out), "--guidance", "1", "--guidance", "2"]) == 0
    stats = read_csv(out / "sample_stats.csv")
    assert stats[0] == ["sample_id", "nfe", "accepted", "rejected", "config_hash"] and len(stats) == 1 + 2 * 4
    sample = out / "samples_w2_p1_e0.flt"
    assert read_tensor(sample).shape == (20, 2)

    ref = tmp_path / "ref.flt"
    write_tensor(ref, np.random.default_rng(0).standard_normal((50, 2)))
    ecfg = write_config(tmp_path / "e.json", {**SMALL, "sample": {"reference": str(ref)}})
    assert main(["eval", "--config", ecfg, "--out", str(out), str(sample)]) == 0
    rows = read_csv(out / "eval.csv")
    assert rows[0][-1] == "config_hash" and len(rows) == 2

    wide = tmp_path / "wide.flt"
    write_tensor(wide, np.zeros((5, 3)))
    assert main(["eval", "--config", ecfg, "--out", str(out), str(wide)]) == 4
    (tmp_path / "trunc.flt").write_bytes(tensor_bytes(np.zeros((4, 2)))[:-1])
    assert main(["eval", "--config", ecfg, "--out", str(out), str(tmp_path / "trunc.flt")]) == 4


def test_eval_against_itself(tmp_path):
    from flowscreen.metrics import bootstrap_se, kid_unbiased, poly_kernel

    ref = tmp_path / "ref.flt"
    data = np.random.default_rng(1).standard_normal((200, 3))
    write_tensor(ref, data)
    cfg = write_config(tmp_path / "e.json", {"sample": {"reference": str(ref)}})
    assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, row = read_csv(tmp_path / "eval.csv")
    vals = dict(zip(header, row))
    kid = float(vals["kid"])
    assert float(vals["frechet"]) < 1e-8
    assert abs(kid) < 3 * bootstrap_se(kid_unbiased, data, data, n_boot=100, seed=0)
    k = poly_kernel(data, data)
    n = len(data)
    off = (k.sum() - np.trace(k)) / (n * (n - 1))
    assert kid == pytest.approx(-2 * (np.trace(k) / n - off) / n, rel=1e-9)


def test_cli_forced_divergence_exit_code(tmp_path):
    raw = {"data": {"dim": 16, "n_pert": 3, "n_ctx": 2, "image_channels": 1, "image_size": 4, "n_train_per": 20},
           "model": {"kind": "mit", "hidden": 16, "depth": 2, "heads": 2, "time_dim": 8},
           "train": {"lr": 100.0, "batch": 16, "steps": 200}}
    cfg = write_config(tmp_path / "c.json", raw)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "model.ckpt").exists()


def test_cli_flops(tmp_path):
    assert main(["flops", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "flops.csv")
    assert rows[0] == ["model", "params", "cond_params", "flops_per_image", "attention_flops", "batch", "steps",
                       "exaflops", "config_hash"]
    xl = [r for r in rows if r[0] == "XL/2@96x96x6"][0]
    assert abs(int(xl[3]) - 1e12) < 0.15e12


def test_cli_bound_check(tmp_path):
    cfg = write_config(tmp_path / "b.json", {"bound": {"instances": 20}})
    assert main(["bound-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bound_check.csv")
    assert rows[0] == X.BOUND_HEADER and len(rows) == 21
    assert all(r[8] == "1" for r in rows[1:])


@pytest.mark.parametrize("n_samples", [0, 300])
def test_bound_with_exact_embedding(n_samples):
    cfg = C.from_dict({"bound": {"instances": 15, "delta_scale": 0.0, "n_samples": n_samples}})
    recs = X.run_bound_check(cfg)
    assert all(r.embedding_error == 0 and r.holds for r in recs)
    if not n_samples:
        assert all(r.measured == pytest.approx(r.eps_base, abs=1e-12) for r in recs)


def test_bound_is_tight_for_pure_embedding_error():
    mu, delta = np.array([1.0, -2.0]), np.array([0.3, 0.4])
    assert X.w2_gaussian(mu, np.eye(2), mu + delta, np.eye(2)) == pytest.approx(0.5, abs=1e-9)


def test_bound_sample_mode_holds():
    cfg = C.from_dict({"bound": {"instances": 10, "n_samples": 400}})
    assert all(r.holds for r in X.run_bound_check(cfg))


def test_holdout_leakage_is_an_error():
    with pytest.raises(DataError):
        X.audit_holdout(np.array([1, 2, 3]), [3])
    X.audit_holdout(np.array([1, 2]), [3])
    cfg = C.from_dict({"data": {"holdout": [2], "n_pert": 4, "n_train_per": 10}})
    spec = X.build_screen(cfg)
    leaky = X.sample_dataset(spec, [1, 2], 5, np.random.default_rng(0))
    with pytest.raises(DataError):
        X.train_adaptor(X.build_velocity(cfg), spec, cfg, leaky)


def test_holdout_never_reaches_training(tmp_path):
    raw = {**SMALL, "data": {**SMALL["data"], "n_pert": 4, "holdout": [3]}}
    run = X.train_run(C.from_dict(raw), tmp_path)
    assert 3 not in json.loads((tmp_path / "manifest.json").read_text())["train_perturbations"]
    assert run.spec.holdout == (3,)


def test_adaptor_requires_holdout_and_noise_to_data():
    with pytest.raises(X.ContractError):
        X.run_adaptor(C.from_dict({}))
    with pytest.raises(X.ContractError):
        X.run_adaptor(C.from_dict({"data": {"holdout": [1]}, "flow": {"kind": "control_to_perturbed"}}))


def test_ablation_missing_checkpoint_names_cell(tmp_path):
    cfg = C.from_dict({"ablation": {"configs": ["C"], "train_inline": False, "checkpoint_dir": str(tmp_path)}})
    with pytest.raises(DataError, match="cell C"):
        X.run_ablation(cfg)
    assert main(["ablate", "--config", write_config(tmp_path / "a.json", cfg.to_dict()),
                 "--out", str(tmp_path / "o")]) == 4


def test_ablation_labels():
    assert X.ABLATION["A"][0] == "control_to_perturbed" and X.ABLATION["B"][:2] == ("noise_to_data", "independent")
    assert X.ABLATION["D"][1] == "ot" and X.ABLATION["E"][2] == "counterfactual"
    with pytest.raises(X.ContractError):
        X.ablation_config(C.RunConfig(), "F")


def test_small_ablation_writes_csv(tmp_path):
    raw = {**SMALL, "ablation": {"configs": ["B", "C"]}, "guidance": [1.0]}
    cells = X.run_ablation(C.from_dict(raw), tmp_path, n_boot=5)
    rows = read_csv(tmp_path / "ablation.csv")
    assert rows[0] == X.ABLATION_HEADER and [r[0] for r in rows[1:]] == ["B", "C"]
    assert cells[1].summary.mean_nfe > cells[0].summary.mean_nfe
    assert not (tmp_path / "C").exists()  # C reuses the B checkpoint


def test_bridge_k1_trains_to_higher_loss():
    finals = {}
    for kind, k in (("linear", 0.0), ("brownian_bridge", 1.0)):
        raw = {**SMALL, "interpolant": {"kind": kind, "k": k}, "train": {**SMALL["train"], "steps": 300}}
        run = X.train_run(C.from_dict(raw))
        finals[kind] = float(np.mean(run.result.losses[-100:]))
    assert finals["brownian_bridge"] > 2 * finals["linear"]


def test_stability_harness_never_raises(monkeypatch):
    cfg = C.from_dict({"data": {"dim": 16, "n_pert": 2, "n_ctx": 1, "image_channels": 1, "image_size": 4,
                                "n_train_per": 10},
                       "train": {"lr": 100.0, "batch": 8, "steps": 30}})
    base = X.MiTConfig(depth=2, heads=2, hidden=8, time_dim=4, proj_dropout=0.0, use_long_skips=False)
    runs = X.run_stability(cfg, X.stability_variants(base), [0])
    assert len(runs) == 3 and all(r.diverged for r in runs)

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(X, "train_loop", boom)
    runs = X.run_stability(cfg, {"baseline": base}, [0])
    assert runs[0].diverged and "RuntimeError" in runs[0].reason


def test_mean_steps():
    runs = [X.StabilityRun("a", 0, 10, True, ""), X.StabilityRun("a", 1, 20, True, ""),
            X.StabilityRun("b", 0, 101, False, "")]
    assert X.mean_steps(runs) == {"a": 15.0, "b": 101.0}
