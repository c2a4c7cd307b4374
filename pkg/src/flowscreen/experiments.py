"""Desk-scale experiments: training runs, the ablation matrix, adaptor transfer,
the embedding-error bound check and the stability harness."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import RunConfig, from_dict
from .coupling import DataError, FlowConstruction, FlowKind
from .data import (CONTROL, ContractError, DatasetSampler, LabelledSet, SyntheticScreenSpec,
                   control_pool, make_screen, sample_dataset, sample_screen, write_manifest)
from .interpolants import Interpolant, Kind
from .metrics import MetricReport, bootstrap_se, evaluate, frechet_distance, gaussian_frechet, make_extractor, mmd_rbf
from .models import Adaptor, CondLabels, MiT, MiTConfig, MLPVelocity, VelocityField
from .sampling import SolverSpec, counterfactual, generate, transport
from .training import (AdamState, DivergenceReport, TrainResult, adam_step, fm_loss,
                       step_rng, train_loop)

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# construction from a run config

def build_screen(cfg: RunConfig) -> SyntheticScreenSpec:
    d = cfg.data
    if d.means:
        mu = np.asarray(d.means, dtype=np.float64)
        if mu.shape != (d.n_pert, d.dim):
            raise ContractError(f"means has shape {mu.shape}, expected {(d.n_pert, d.dim)}")
        return SyntheticScreenSpec(mu, np.zeros((d.n_ctx, d.dim)), np.ones((d.n_ctx, d.dim)), d.sigma,
                                   tuple(d.holdout), mu.copy(), cfg.seed, {"means": d.means, "sigma": d.sigma})
    return make_screen(d.dim, d.n_pert, d.n_ctx, d.mu_scale, d.offset_scale, d.scale_jitter, d.sigma,
                       tuple(d.holdout), d.phi_noise, d.phi_kind, cfg.seed)


def sample_shape(cfg: RunConfig) -> tuple[int, ...]:
    d = cfg.data
    if d.image_channels:
        if d.image_channels * d.image_size ** 2 != d.dim:
            raise ContractError(f"image {d.image_channels}x{d.image_size}^2 does not match dim={d.dim}")
        return (d.image_channels, d.image_size, d.image_size)
    return (d.dim,)


def mit_config(cfg: RunConfig) -> MiTConfig:
    m = cfg.model
    return MiTConfig(depth=m.depth, heads=m.heads, hidden=m.hidden, patch=m.patch, proj_dropout=m.proj_dropout,
                     use_rmsnorm=m.use_rmsnorm, use_long_skips=m.use_long_skips, time_dim=m.time_dim)


def build_velocity(cfg: RunConfig, seed: int | None = None) -> VelocityField:
    m, d = cfg.model, cfg.data
    seed = cfg.seed if seed is None else seed
    if m.kind == "mlp":
        return MLPVelocity(d.dim, d.n_pert, d.n_ctx, m.hidden, m.layers, m.cond_dim, m.time_dim, seed=seed)
    if m.kind == "mit":
        shape = sample_shape(cfg)
        if len(shape) != 3:
            raise ContractError("the MiT model needs image_channels/image_size in the data config")
        return MiT(shape[0], shape[1], d.n_pert, d.n_ctx, mit_config(cfg), seed=seed)
    raise ContractError(f"unknown model kind {m.kind!r}")


def interpolant(cfg: RunConfig) -> Interpolant:
    return Interpolant(Kind(cfg.interpolant.kind), cfg.interpolant.k)


def flow(cfg: RunConfig) -> FlowConstruction:
    return FlowConstruction(FlowKind(cfg.flow.kind), cfg.flow.noise_aug_prob)


def solver(cfg: RunConfig) -> SolverSpec:
    s = cfg.solver
    return SolverSpec(s.kind, s.rtol, s.atol, s.n_steps)


class ShapedSampler(DatasetSampler):
    def __init__(self, data: LabelledSet, shape: tuple[int, ...]):
        super().__init__(data)
        self.shape = shape

    def __call__(self, n, rng):
        x, c = super().__call__(n, rng)
        return x.reshape((n,) + self.shape), c


def training_perturbations(cfg: RunConfig, spec: SyntheticScreenSpec) -> list[int]:
    """Seen ids; control-to-perturbed targets exclude the control itself."""
    perts = spec.seen
    if FlowKind(cfg.flow.kind) is FlowKind.CONTROL_TO_PERTURBED:
        perts = [p for p in perts if p != CONTROL]
    return perts


def audit_holdout(ids, holdout) -> None:
    leaked = sorted(set(int(i) for i in np.unique(ids)) & set(int(h) for h in holdout))
    if leaked:
        raise DataError(f"holdout perturbations {leaked} present in a training path")


@dataclass
class Run:
    cfg: RunConfig
    spec: SyntheticScreenSpec
    result: TrainResult
    train_pool: dict
    eval_pool: dict

    @property
    def model(self) -> VelocityField:
        return self.result.ema_model if self.cfg.sample.use_ema else self.result.model


def pools(cfg: RunConfig, spec: SyntheticScreenSpec) -> tuple[dict, dict]:
    shape = sample_shape(cfg)
    k = cfg.data.control_pool_size
    train = control_pool(spec, k, np.random.default_rng([cfg.seed, 11]))
    held = control_pool(spec, k, np.random.default_rng([cfg.seed, 12]))
    reshape = lambda pool: {e: v.reshape((len(v),) + shape) for e, v in pool.items()}
    return reshape(train), reshape(held)


def train_run(cfg: RunConfig, out_dir: str | Path | None = None) -> Run:
    spec = build_screen(cfg)
    perts = training_perturbations(cfg, spec)
    data = sample_dataset(spec, perts, cfg.data.n_train_per, np.random.default_rng([cfg.seed, 10]))
    audit_holdout(data.perturbation, spec.holdout)
    train_pool, eval_pool = pools(cfg, spec)
    model = build_velocity(cfg)
    tcfg = replace(cfg.train, seed=cfg.seed)
    result = train_loop(model, ShapedSampler(data, sample_shape(cfg)), tcfg, interpolant(cfg), flow(cfg),
                        train_pool, out_dir, cfg.hash(), build_velocity(cfg))
    if out_dir is not None:
        write_manifest(Path(out_dir) / "manifest.json", {
            "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
            "screen": spec.manifest(), "train_perturbations": sorted(set(int(p) for p in data.perturbation)),
            "holdout": list(spec.holdout), "divergence": asdict(result.report),
        })
    return Run(cfg, spec, result, train_pool, eval_pool)


def two_gaussian_config(seed: int = 0, steps: int = 2000) -> RunConfig:
    """Control N(0, s^2 I) and one perturbation N((3, 3), s^2 I) in a single context."""
    return from_dict({
        "seed": seed,
        "data": {"dim": 2, "n_pert": 2, "n_ctx": 1, "means": [[0.0, 0.0], [3.0, 3.0]], "sigma": 0.5,
                 "n_train_per": 1000},
        "train": {"lr": 1e-3, "batch": 128, "steps": steps},
    })


# ----------------------------------------------------------------------------
# sampling and evaluation per condition

@dataclass
class ConditionSample:
    perturbation: int
    context: int
    samples: np.ndarray
    nfe: int


def sample_condition(model: VelocityField, flow_kind: FlowKind, mode: str, p: int, e: int, n: int,
                     w: float, spec: SolverSpec, pool: dict, rng: np.random.Generator,
                     c: CondLabels | None = None) -> ConditionSample:
    c = c if c is not None else CondLabels([p], [e])
    if mode == "counterfactual":
        if flow_kind is not FlowKind.NOISE_TO_DATA:
            raise ContractError("counterfactual sampling needs a noise-to-data model")
        src = pool[e][rng.integers(len(pool[e]), size=n)]
        res = counterfactual(model, src, c, w, spec)
        return ConditionSample(p, e, res.sample, res.stats.nfe)
    if mode != "generate":
        raise ContractError(f"unknown sampling mode {mode!r}")
    if flow_kind is FlowKind.CONTROL_TO_PERTURBED:
        src = pool[e][rng.integers(len(pool[e]), size=n)]
        x, stats = transport(model, src, c, w, spec)
    else:
        x, stats = generate(model, c, w, spec, rng, n)
    return ConditionSample(p, e, x, stats.nfe)


def condition_rng(seed: int, tag: int, p: int, e: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, p, e])


def real_samples(spec: SyntheticScreenSpec, p: int, e: int, n: int, seed: int) -> np.ndarray:
    return sample_screen(spec, p, e, n, condition_rng(seed, 3, p, e))


@dataclass
class EvalSummary:
    report: MetricReport
    mmd_per_condition: list[float]
    mmd_se: float
    mean_nfe: float
    conditions: list[tuple[int, int]] = field(default_factory=list)

    @property
    def mmd(self) -> float:
        return float(np.mean(self.mmd_per_condition))


def evaluate_conditions(samples: list[ConditionSample], spec: SyntheticScreenSpec, n_real: int, seed: int,
                        extractor=None, bandwidth="median", n_boot: int = 100) -> EvalSummary:
    """Average per-condition metrics against fresh held-out real samples."""
    reports, mmds, ses = [], [], []
    for s in samples:
        real = real_samples(spec, s.perturbation, s.context, n_real, seed)
        gen = s.samples.reshape(len(s.samples), -1)
        reports.append(evaluate(real, gen, extractor, bandwidth))
        mmds.append(reports[-1].mmd_rbf)
        if n_boot:
            ses.append(bootstrap_se(lambda a, b: mmd_rbf(a, b, bandwidth), real, gen, n_boot,
                                    seed=seed + 7919 * s.perturbation + s.context))
    mean = lambda f: float(np.mean([getattr(r, f) for r in reports]))
    rep = MetricReport(mean("frechet"), mean("kid"), mean("kid_scaled"), mean("mmd_rbf"),
                       sum(r.n_real for r in reports), sum(r.n_gen for r in reports),
                       any(r.shrinkage for r in reports))
    se = float(np.sqrt(np.sum(np.square(ses))) / len(ses)) if ses else float("nan")
    return EvalSummary(rep, mmds, se, float(np.mean([s.nfe for s in samples])),
                       [(s.perturbation, s.context) for s in samples])


def eval_conditions(spec: SyntheticScreenSpec, perts=None) -> list[tuple[int, int]]:
    perts = [p for p in spec.seen if p != CONTROL] if perts is None else perts
    return [(p, e) for p in perts for e in range(spec.n_ctx)]


def evaluate_run(run: Run, mode: str = "generate", w: float = 1.0, conditions=None,
                 n_boot: int = 100) -> EvalSummary:
    cfg = run.cfg
    conditions = conditions or eval_conditions(run.spec)
    samples = [sample_condition(run.model, FlowKind(cfg.flow.kind), mode, p, e, cfg.sample.n_per_condition,
                                w, solver(cfg), run.eval_pool, condition_rng(cfg.seed, 4, p, e))
               for p, e in conditions]
    ext = make_extractor(cfg.metrics.extractor, cfg.data.dim, cfg.metrics.dim, cfg.seed)
    return evaluate_conditions(samples, run.spec, cfg.data.n_eval_per, cfg.seed, ext,
                               cfg.metrics.bandwidth, n_boot)


# ----------------------------------------------------------------------------
# ablation matrix

ABLATION = {
    # label: (flow kind, coupling, sampling mode)
    "A": ("control_to_perturbed", "independent", "generate"),
    "B": ("noise_to_data", "independent", "generate"),
    "C": ("noise_to_data", "independent", "counterfactual"),
    "D": ("noise_to_data", "ot", "generate"),
    "E": ("noise_to_data", "ot", "counterfactual"),
}

ABLATION_HEADER = ["config", "flow", "coupling", "mode", "guidance", "frechet", "kid", "kid_scaled",
                   "mmd_rbf", "mmd_se", "n_real", "n_gen", "mean_nfe", "config_hash"]


@dataclass
class AblationCell:
    config: str
    flow: str
    coupling: str
    mode: str
    guidance: float
    summary: EvalSummary

    def row(self, config_hash: str) -> list:
        r = self.summary.report
        return [self.config, self.flow, self.coupling, self.mode, repr(self.guidance), repr(r.frechet),
                repr(r.kid), repr(r.kid_scaled), repr(r.mmd_rbf), repr(self.summary.mmd_se), r.n_real,
                r.n_gen, repr(self.summary.mean_nfe), config_hash]


def ablation_config(cfg: RunConfig, label: str) -> RunConfig:
    if label not in ABLATION:
        raise ContractError(f"unknown ablation config {label!r}")
    kind, coupling, _ = ABLATION[label]
    return replace(cfg, flow=replace(cfg.flow, kind=kind), train=replace(cfg.train, coupling=coupling))


def _load_run(cfg: RunConfig, ckpt_dir: Path, label: str) -> Run:
    name = "model_ema.ckpt" if cfg.sample.use_ema else "model.ckpt"
    path = ckpt_dir / label / name
    if not path.exists():
        raise DataError(f"ablation cell {label}: checkpoint {path} not found")
    model, _ = checkpoint.load(path)
    spec = build_screen(cfg)
    train_pool, eval_pool = pools(cfg, spec)
    res = TrainResult(model, model, [], DivergenceReport())
    return Run(cfg, spec, res, train_pool, eval_pool)


def run_ablation(cfg: RunConfig, out_dir: str | Path | None = None, n_boot: int = 50) -> list[AblationCell]:
    """One cell per (config, guidance); training shared across configs with equal flow and coupling."""
    cells, trained = [], {}
    for label in cfg.ablation.configs:
        sub = ablation_config(cfg, label)
        kind, coupling, mode = ABLATION[label]
        key = (kind, coupling)
        if key not in trained:
            if cfg.ablation.train_inline:
                trained[key] = train_run(sub, Path(out_dir) / label if out_dir else None)
            else:
                trained[key] = _load_run(sub, Path(cfg.ablation.checkpoint_dir), label)
        run = trained[key]
        for w in cfg.guidance:
            cells.append(AblationCell(label, kind, coupling, mode, float(w), evaluate_run(run, mode, w, n_boot=n_boot)))
    if out_dir is not None:
        write_csv(Path(out_dir) / "ablation.csv", ABLATION_HEADER, [c.row(cfg.hash()) for c in cells])
    return cells


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ----------------------------------------------------------------------------
# adaptor for unseen perturbations

ADAPTOR_HEADER = ["split", "conditioning", "frechet", "kid", "mmd_rbf", "mmd_se", "n_conditions",
                  "n_real", "n_gen", "config_hash"]


def freeze_digest(model) -> dict[str, bytes]:
    return {k: v.tobytes() for k, v in model.state_dict().items()}


def split_validation(perts: list[int], fraction: float, seed: int) -> tuple[list[int], list[int]]:
    perts = sorted(perts)
    n_val = int(round(fraction * len(perts)))
    if fraction > 0 and (n_val < 1 or n_val >= len(perts)):
        raise ContractError(f"validation fraction {fraction} leaves no train or no validation ids")
    val = sorted(np.random.default_rng([seed, 21]).choice(perts, n_val, replace=False).tolist()) if n_val else []
    return [p for p in perts if p not in val], val


def _adaptor_loss(adaptor: Adaptor, base: VelocityField, spec: SyntheticScreenSpec, data: LabelledSet,
                  idx: np.ndarray, shape, ip, rng) -> T.Tensor:
    x1 = data.x[idx].reshape((len(idx),) + shape)
    x0 = rng.standard_normal(x1.shape)
    emb = adaptor(spec.phi[data.perturbation[idx]])
    labels = CondLabels(np.full(len(idx), -1), data.context[idx], emb)
    return fm_loss(base, x0, x1, labels, ip, rng, train=False)


def train_adaptor(base: VelocityField, spec: SyntheticScreenSpec, cfg: RunConfig, data: LabelledSet,
                  val_data: LabelledSet | None = None) -> tuple[Adaptor, list[float], list[tuple[int, float]]]:
    """Fit the adaptor with the flow-matching loss through the frozen base model.

    With ``val_data`` the returned adaptor is the snapshot with the lowest
    loss on a fixed validation batch (early stopping).
    """
    audit_holdout(data.perturbation, spec.holdout)
    a = cfg.adaptor
    cond_dim = base.cond_dim if isinstance(base, MLPVelocity) else base.cfg.hidden
    adaptor = Adaptor(spec.phi.shape[1], cond_dim, a.hidden, a.n_hidden, seed=cfg.seed)
    if a.init_null:
        adaptor.start_from(base.params["cond.pert"].data[-1])
    params = adaptor.parameters()
    tcfg = replace(cfg.train, lr=a.lr, batch=a.batch, steps=a.steps, cond_dropout=0.0, warmup_steps=0)
    opt = AdamState.zeros(params)
    saved_drop, base.drop_prob = base.drop_prob, 0.0
    ip, shape = interpolant(cfg), sample_shape(cfg)
    losses, val_curve = [], []
    best, best_state = np.inf, adaptor.state_dict()

    def validate(step):
        nonlocal best, best_state
        if val_data is None:
            return
        vrng = np.random.default_rng([cfg.seed, 22])
        idx = vrng.integers(len(val_data), size=a.val_batch)
        v = _adaptor_loss(adaptor, base, spec, val_data, idx, shape, ip, vrng).item()
        val_curve.append((step, v))
        if v < best:
            best, best_state = v, adaptor.state_dict()

    try:
        validate(0)
        for step in range(1, a.steps + 1):
            rng = step_rng(cfg.seed + 1, step)
            idx = rng.integers(len(data), size=a.batch)
            with T.Tape() as tape:
                loss = _adaptor_loss(adaptor, base, spec, data, idx, shape, ip, rng)
                grads = tape.backward(loss, params)
            adam_step(params, grads, opt, tcfg)
            losses.append(loss.item())
            if step % a.eval_every == 0 or step == a.steps:
                validate(step)
    finally:
        base.drop_prob = saved_drop
    if val_data is not None:
        adaptor.load_state_dict(best_state)
    return adaptor, losses, val_curve


@dataclass
class AdaptorOutcome:
    seen: EvalSummary
    unseen: EvalSummary
    unconditional: EvalSummary
    adaptor: Adaptor
    losses: list[float]
    frozen: bool
    val_curve: list[tuple[int, float]] = field(default_factory=list)
    fit_ids: list[int] = field(default_factory=list)
    val_ids: list[int] = field(default_factory=list)

    def paired_difference(self) -> tuple[float, float]:
        """Mean and SE of unseen-adaptor minus unconditional MMD, paired over conditions."""
        d = np.asarray(self.unseen.mmd_per_condition) - np.asarray(self.unconditional.mmd_per_condition)
        return float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))


def run_adaptor(cfg: RunConfig, out_dir: str | Path | None = None, base_run: Run | None = None,
                n_boot: int = 50) -> AdaptorOutcome:
    if not cfg.data.holdout:
        raise ContractError("the adaptor experiment needs a non-empty holdout list")
    if FlowKind(cfg.flow.kind) is not FlowKind.NOISE_TO_DATA:
        raise ContractError("the adaptor experiment uses a noise-to-data base model")
    run = base_run or train_run(cfg, Path(out_dir) / "base" if out_dir else None)
    base, spec = run.model, run.spec
    before = freeze_digest(base)
    perturbed = [p for p in spec.seen if p != CONTROL]
    fit_ids, val_ids = split_validation(perturbed, cfg.adaptor.val_fraction, cfg.seed)
    data = sample_dataset(spec, fit_ids, cfg.data.n_train_per, np.random.default_rng([cfg.seed, 20]))
    val_data = (sample_dataset(spec, val_ids, cfg.data.n_train_per, np.random.default_rng([cfg.seed, 23]))
                if val_ids else None)
    if val_data is not None:
        audit_holdout(val_data.perturbation, spec.holdout)
    adaptor, losses, val_curve = train_adaptor(base, spec, cfg, data, val_data)
    frozen = freeze_digest(base) == before
    if not frozen:
        raise RuntimeError("base model parameters changed during adaptor training")

    n, sol, ext = cfg.sample.n_per_condition, solver(cfg), make_extractor(
        cfg.metrics.extractor, cfg.data.dim, cfg.metrics.dim, cfg.seed)

    def summarise(perts, use_adaptor: bool, tag: int):
        out = []
        for p in perts:
            for e in range(spec.n_ctx):
                if use_adaptor:
                    c = CondLabels([-1], [e], adaptor(spec.phi[[p]]).data)
                else:
                    c = CondLabels([-1], [e])
                out.append(sample_condition(base, FlowKind.NOISE_TO_DATA, "generate", p, e, n, 1.0, sol,
                                            run.eval_pool, condition_rng(cfg.seed, tag, p, e), c))
        return evaluate_conditions(out, spec, cfg.data.n_eval_per, cfg.seed, ext, cfg.metrics.bandwidth, n_boot)

    seen = summarise(perturbed, True, 5)
    unseen = summarise(list(spec.holdout), True, 6)
    uncond = summarise(list(spec.holdout), False, 7)
    outcome = AdaptorOutcome(seen, unseen, uncond, adaptor, losses, frozen, val_curve, fit_ids, val_ids)
    if out_dir is not None:
        out = Path(out_dir)
        checkpoint.save(out / "adaptor.ckpt", adaptor, {"config_hash": cfg.hash()})
        rows = []
        for split, cond, s in (("seen", "adaptor", seen), ("unseen", "adaptor", unseen),
                               ("unseen", "unconditional", uncond)):
            r = s.report
            rows.append([split, cond, repr(r.frechet), repr(r.kid), repr(r.mmd_rbf), repr(s.mmd_se),
                         len(s.mmd_per_condition), r.n_real, r.n_gen, cfg.hash()])
        write_csv(out / "adaptor.csv", ADAPTOR_HEADER, rows)
        write_manifest(out / "adaptor_manifest.json", {
            "config_hash": cfg.hash(), "adaptor_train_perturbations": fit_ids, "adaptor_validation_perturbations": val_ids,
            "holdout": list(spec.holdout), "base_frozen": frozen,
        })
    return outcome


# ----------------------------------------------------------------------------
# embedding-error bound: d_P(p*, H(G)) <= eps_base + U |e* - G|

BOUND_HEADER = ["instance", "dim", "eps_base", "U", "embedding_error", "measured", "bound", "slack",
                "holds", "config_hash"]


def w2_gaussian(mu_a, cov_a, mu_b, cov_b) -> float:
    return float(np.sqrt(gaussian_frechet(mu_a, cov_a, mu_b, cov_b)))


@dataclass
class BoundCheckRecord:
    instance: int
    dim: int
    eps_base: float
    U: float
    embedding_error: float
    measured: float
    bound: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound + self.slack

    def row(self, config_hash: str) -> list:
        return [self.instance, self.dim, repr(self.eps_base), repr(self.U), repr(self.embedding_error),
                repr(self.measured), repr(self.bound), repr(self.slack), int(self.holds), config_hash]


def bound_instance(i: int, rng: np.random.Generator, max_dim: int = 6, base_scale: float = 0.5,
                   delta_scale: float = 1.0, n_samples: int = 0) -> BoundCheckRecord:
    """Gaussian instance with H(e) = N(e, I), so U = 1 and every distance is closed-form.

    ``p*`` is N(e* + b, S) with a random offset b and covariance S near I;
    ``G = e* + delta``.  With ``n_samples`` the measured distance comes from
    sample moments and the slack is three bootstrap standard errors.
    """
    d = int(rng.integers(1, max_dim + 1))
    e_star = rng.normal(0.0, 2.0, d)
    b = base_scale * rng.standard_normal(d) * rng.integers(0, 2)
    a = np.eye(d) + base_scale * 0.3 * rng.standard_normal((d, d))
    s = a @ a.T
    delta = delta_scale * rng.uniform() * rng.standard_normal(d)
    g = e_star + delta
    eye = np.eye(d)
    eps_base = w2_gaussian(e_star + b, s, e_star, eye)
    bound = eps_base + 1.0 * float(np.linalg.norm(delta))
    if n_samples:
        chol = np.linalg.cholesky(s)
        ps = e_star + b + rng.standard_normal((n_samples, d)) @ chol.T
        hs = g + rng.standard_normal((n_samples, d))
        stat = lambda x, y: float(np.sqrt(frechet_distance(x, y)))
        measured = stat(ps, hs)
        slack = 3.0 * bootstrap_se(stat, ps, hs, 100, seed=i)
    else:
        measured = w2_gaussian(e_star + b, s, g, eye)
        slack = 1e-9 * (1.0 + bound)
    return BoundCheckRecord(i, d, eps_base, 1.0, float(np.linalg.norm(delta)), measured, bound, slack)


def run_bound_check(cfg: RunConfig, out_dir: str | Path | None = None) -> list[BoundCheckRecord]:
    bc = cfg.bound
    rng = np.random.default_rng([cfg.seed, 30])
    recs = [bound_instance(i, rng, bc.max_dim, bc.base_scale, bc.delta_scale, bc.n_samples)
            for i in range(bc.instances)]
    if out_dir is not None:
        write_csv(Path(out_dir) / "bound_check.csv", BOUND_HEADER, [r.row(cfg.hash()) for r in recs])
    return recs


# ----------------------------------------------------------------------------
# stability harness

STABILITY_HEADER = ["variant", "seed", "steps_to_divergence", "diverged", "reason", "config_hash"]


@dataclass
class StabilityRun:
    variant: str
    seed: int
    steps_to_divergence: int  # steps + 1 when training never diverged
    diverged: bool
    reason: str


def stability_variants(base: MiTConfig) -> dict[str, MiTConfig]:
    return {
        "baseline": base,
        "proj_dropout": replace(base, proj_dropout=0.1),
        "long_skips": replace(base, use_long_skips=True),
    }


def run_stability(cfg: RunConfig, variants: dict[str, MiTConfig], seeds, out_dir: str | Path | None = None
                  ) -> list[StabilityRun]:
    """Train each variant per seed; divergence is recorded, never raised."""
    spec = build_screen(cfg)
    shape = sample_shape(cfg)
    data = sample_dataset(spec, spec.seen, cfg.data.n_train_per, np.random.default_rng([cfg.seed, 10]))
    sampler = ShapedSampler(data, shape)
    runs = []
    for name, mcfg in variants.items():
        for seed in seeds:
            model = MiT(shape[0], shape[1], spec.n_pert, spec.n_ctx, mcfg, seed=seed)
            tcfg = replace(cfg.train, seed=seed)
            try:
                res = train_loop(model, sampler, tcfg, interpolant(cfg), flow(cfg),
                                 ema_model=MiT(shape[0], shape[1], spec.n_pert, spec.n_ctx, mcfg, seed=seed))
                rep = res.report
            except Exception as err:  # noqa: BLE001 - any failure counts as divergence
                log.warning("variant %s seed %s failed: %s", name, seed, err)
                rep = DivergenceReport(True, 0, f"{type(err).__name__}: {err}")
            step = rep.step if rep.diverged else tcfg.steps + 1
            runs.append(StabilityRun(name, seed, int(step), rep.diverged, rep.reason))
    if out_dir is not None:
        write_csv(Path(out_dir) / "stability.csv", STABILITY_HEADER,
                  [[r.variant, r.seed, r.steps_to_divergence, int(r.diverged), r.reason, cfg.hash()] for r in runs])
    return runs


def mean_steps(runs: list[StabilityRun]) -> dict[str, float]:
    out: dict[str, list[int]] = {}
    for r in runs:
        out.setdefault(r.variant, []).append(r.steps_to_divergence)
    return {k: float(np.mean(v)) for k, v in out.items()}
