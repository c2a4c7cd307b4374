"""Flow-matching loss, Adam with global-norm clipping, power-function EMA and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import checkpoint
from . import tensor as T
from .coupling import FlowConstruction, FlowKind, apply_ot_grouped, pair_control, pair_independent
from .interpolants import Interpolant, interpolate, target_velocity
from .models import CondLabels, Module, VelocityField, build_model

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step, self.reason = step, reason


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 0.5
    batch: int = 256
    steps: int = 2000
    cond_dropout: float = 0.15
    ema_sigma_rel: float = 0.01
    seed: int = 0
    log_every: int = 10
    coupling: str = "independent"  # or "ot"
    divergence_factor: float = 10.0
    divergence_window: int = 1000
    divergence_min_history: int = 1
    # stability-harness toggles, off by default
    weight_decay: float = 0.0
    warmup_steps: int = 0
    inv_sqrt_decay: bool = False
    augment: bool = False

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "adam_eps", "clip_norm", "batch", "steps", "ema_sigma_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ValueError("cond_dropout must be in [0, 1)")
        if self.coupling not in ("independent", "ot"):
            raise ValueError(f"unknown coupling {self.coupling!r}")


# ----------------------------------------------------------------------------
# EMA

def ema_gamma(sigma_rel: float) -> float:
    """Power exponent whose averaging profile has relative width ``sigma_rel``."""
    f = lambda g: (g + 1) / ((g + 2) ** 2 * (g + 3)) - sigma_rel ** 2
    # decreasing in g >= 0; g = 0 gives width 1/sqrt(12)
    if not 0 < sigma_rel < 12 ** -0.5:
        raise ValueError(f"sigma_rel={sigma_rel} outside (0, 1/sqrt(12))")
    return brentq(f, 0.0, 1e8, xtol=1e-14, rtol=1e-15, maxiter=500)


@dataclass
class EmaState:
    gamma: float
    params: list[np.ndarray]
    t: int = 0

    @classmethod
    def create(cls, live: Sequence[np.ndarray], sigma_rel: float = 0.01) -> "EmaState":
        return cls(ema_gamma(sigma_rel), [np.array(p, dtype=np.float64) for p in live])


def ema_update(ema: EmaState, live: Sequence[np.ndarray], t: int) -> EmaState:
    """In-place power-function EMA step with beta_t = (1 - 1/t)^(gamma + 1)."""
    if t < 1:
        raise ValueError("EMA step index starts at 1")
    beta = (1.0 - 1.0 / t) ** (ema.gamma + 1.0)
    for avg, p in zip(ema.params, live):
        avg *= beta
        avg += (1.0 - beta) * p
    ema.t = t
    return ema


# ----------------------------------------------------------------------------
# optimiser

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Sequence[T.Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        s = max_norm / norm
        grads = [g * s for g in grads]
    return grads, norm


def lr_at(cfg: TrainConfig, step: int) -> float:
    lr = cfg.lr
    if cfg.warmup_steps:
        lr *= min(1.0, step / cfg.warmup_steps)
        if cfg.inv_sqrt_decay:
            lr /= math.sqrt(max(step / cfg.warmup_steps, 1.0))
    return lr


def adam_step(params: Sequence[T.Tensor], grads: list[np.ndarray], state: AdamState,
              cfg: TrainConfig) -> float:
    """Clip to ``cfg.clip_norm`` then apply one bias-corrected Adam update.

    Returns the pre-clip global gradient norm.
    """
    grads, norm = clip_global_norm(grads, cfg.clip_norm)
    state.step += 1
    k = state.step
    lr = lr_at(cfg, k)
    c1 = 1.0 - cfg.beta1 ** k
    c2 = 1.0 - cfg.beta2 ** k
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if cfg.weight_decay:
            update = update + lr * cfg.weight_decay * p.data
        p.data = p.data - update
    return norm


# ----------------------------------------------------------------------------
# loss

def augment(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform dequantisation plus random horizontal/vertical flips of (B, C, H, W) images."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        return x
    out = x + rng.uniform(0.0, 1.0 / 256.0, size=x.shape)
    flip_h = rng.random(len(x)) < 0.5
    flip_v = rng.random(len(x)) < 0.5
    out[flip_h] = out[flip_h][..., ::-1]
    out[flip_v] = out[flip_v][..., ::-1, :]
    return out


def fm_sample(ip: Interpolant, x0: np.ndarray, x1: np.ndarray, rng: np.random.Generator):
    """Draw (t, eps) and return (t, x_t, target velocity)."""
    t = ip.sample_t(len(x0), rng)
    eps = rng.standard_normal(x0.shape) if ip.uses_noise else None
    return t, interpolate(ip, x0, x1, t, eps), target_velocity(ip, x0, x1, t, eps)


def fm_loss(model: VelocityField, x0: np.ndarray, x1: np.ndarray, labels: CondLabels,
            ip: Interpolant, rng: np.random.Generator, train: bool = True) -> T.Tensor:
    """Mean over all elements of (v(x_t, t, c) - target)^2."""
    t, xt, target = fm_sample(ip, x0, x1, rng)
    pred = model(T.Tensor(xt), t, labels, train=train, rng=rng)
    return T.mse(pred, target)


def make_pairs(x1: np.ndarray, labels: CondLabels, flow: FlowConstruction, coupling: str,
               rng: np.random.Generator, control_pool: dict | None = None):
    """Return (x0, x1, labels) for one minibatch under the chosen construction."""
    if flow.kind is FlowKind.CONTROL_TO_PERTURBED:
        if control_pool is None:
            raise ValueError("control-to-perturbed training needs a control pool")
        x0, x1 = pair_control(x1, labels.context, control_pool, rng, flow.noise_aug_prob)
        return x0, x1, labels
    x0, x1 = pair_independent(x1, rng)
    if coupling == "ot":
        groups = np.stack([labels.perturbation, labels.context], axis=1)
        x0, x1, order = apply_ot_grouped(x0, x1, groups, np.arange(len(x1)))
        labels = labels.take(order)
    return x0, x1, labels


# ----------------------------------------------------------------------------
# loop

@dataclass
class DivergenceReport:
    diverged: bool = False
    step: int | None = None
    reason: str = ""
    final_loss: float = float("nan")


@dataclass
class TrainResult:
    model: Module
    ema_model: Module
    trace: list[tuple[int, float, float, bool]]
    report: DivergenceReport
    losses: list[float] = field(default_factory=list)


Sampler = Callable[[int, np.random.Generator], tuple[np.ndarray, CondLabels]]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def train_loop(model: VelocityField, sampler: Sampler, cfg: TrainConfig,
               ip: Interpolant | None = None, flow: FlowConstruction | None = None,
               control_pool: dict | None = None, out_dir: str | Path | None = None,
               config_hash: str = "", ema_model: Module | None = None) -> TrainResult:
    """Train ``model`` in place and return live/EMA models, loss trace and divergence report.

    Divergence (non-finite values or loss above ``divergence_factor`` x the
    trailing median) halts the loop; artifacts are still written.
    """
    ip = ip or Interpolant()
    flow = flow or FlowConstruction()
    model.drop_prob = cfg.cond_dropout
    params = model.parameters()
    opt = AdamState.zeros(params)
    ema = EmaState.create([p.data for p in params], cfg.ema_sigma_rel)
    trace: list[tuple[int, float, float, bool]] = []
    losses: list[float] = []
    report = DivergenceReport()
    for step in range(1, cfg.steps + 1):
        rng = step_rng(cfg.seed, step)
        try:
            x1, labels = sampler(cfg.batch, rng)
            if cfg.augment:
                x1 = augment(x1, rng)
            x0, x1, labels = make_pairs(x1, labels, flow, cfg.coupling, rng, control_pool)
            with T.Tape() as tape:
                loss = fm_loss(model, x0, x1, labels, ip, rng)
                grads = tape.backward(loss, params)
            value = loss.item()
            gnorm = adam_step(params, grads, opt, cfg)
            if not all(np.all(np.isfinite(p.data)) for p in params):
                raise T.NumericError("adam")
        except T.NumericError as err:
            report = DivergenceReport(True, step, f"non-finite value in {err.op}", float("nan"))
            trace.append((step, float("nan"), float("nan"), True))
            break
        losses.append(value)
        window = losses[-cfg.divergence_window - 1:-1]
        if len(window) >= max(cfg.divergence_min_history, 1) and value > cfg.divergence_factor * float(np.median(window)):
            report = DivergenceReport(True, step, "loss exceeded trailing median", value)
            trace.append((step, value, gnorm, True))
            break
        ema_update(ema, [p.data for p in params], step)
        if step % cfg.log_every == 0 or step == 1 or step == cfg.steps:
            trace.append((step, value, gnorm, False))
    if not report.diverged:
        report.final_loss = losses[-1] if losses else float("nan")
    else:
        log.warning("divergence at step %s: %s", report.step, report.reason)

    if ema_model is None:
        ema_model = build_model(model.kind, model.config())
    ema_model.load_state_dict({k: a.copy() for k, a in zip(model.params, ema.params)})
    result = TrainResult(model, ema_model, trace, report, losses)
    if out_dir is not None:
        write_artifacts(result, Path(out_dir), config_hash)
    return result


def write_artifacts(result: TrainResult, out: Path, config_hash: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    extra = {"config_hash": config_hash}
    checkpoint.save(out / "model.ckpt", result.model, extra)
    checkpoint.save(out / "model_ema.ckpt", result.ema_model, extra)
    write_loss_csv(out / "loss.csv", result.trace, config_hash)


def write_loss_csv(path: Path, trace, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "grad_norm", "diverged", "config_hash"])
        for step, loss, gnorm, div in trace:
            w.writerow([step, repr(float(loss)), repr(float(gnorm)), int(div), config_hash])
