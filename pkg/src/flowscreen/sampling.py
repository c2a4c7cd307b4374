"""ODE solvers, classifier-free guidance, generation and counterfactual sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .models import CondLabels, VelocityField

# Dormand-Prince 5(4) tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
PI_BETA = 0.04
H_MIN = 1e-10


class StiffnessError(RuntimeError):
    def __init__(self, msg: str, stats: "SolverStats"):
        super().__init__(msg)
        self.stats = stats


@dataclass
class SolverSpec:
    kind: str = "dopri5"  # or "euler"
    rtol: float = 1e-5
    atol: float = 1e-5
    n_steps: int = 100
    direction: str = "forward"  # or "reverse"
    max_steps: int = 100_000

    def __post_init__(self):
        if self.kind not in ("dopri5", "euler"):
            raise ValueError(f"unknown solver {self.kind!r}")
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    def reversed(self) -> "SolverSpec":
        return SolverSpec(self.kind, self.rtol, self.atol, self.n_steps,
                          "reverse" if self.direction == "forward" else "forward", self.max_steps)


@dataclass
class SolverStats:
    nfe: int = 0
    accepted: int = 0
    rejected: int = 0
    t_reached: float = 0.0

    def __add__(self, other: "SolverStats") -> "SolverStats":
        return SolverStats(self.nfe + other.nfe, self.accepted + other.accepted,
                           self.rejected + other.rejected, other.t_reached)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def solve_ode(f: Callable[[np.ndarray, float], np.ndarray], x_init: np.ndarray,
              spec: SolverSpec | None = None) -> tuple[np.ndarray, SolverStats]:
    """Integrate dx/dt = f(x, t) over [0, 1] (forward) or [1, 0] (reverse)."""
    spec = spec or SolverSpec()
    t0, t1 = (0.0, 1.0) if spec.direction == "forward" else (1.0, 0.0)
    x = np.array(x_init, dtype=np.float64)
    stats = SolverStats(t_reached=t0)

    def call(xx, tt):
        stats.nfe += 1
        return f(xx, tt)

    if spec.kind == "euler":
        h = (t1 - t0) / spec.n_steps
        for i in range(spec.n_steps):
            t = t0 + i * h
            x = x + h * call(x, t)
            stats.accepted += 1
        stats.t_reached = t1
        return x, stats
    return _dopri5(call, x, t0, t1, spec, stats)


def _initial_step(f, x, t0, k1, direction, spec) -> float:
    scale = spec.atol + spec.rtol * np.abs(x)
    d0, d1 = _rms(x / scale), _rms(k1 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    x1 = x + direction * h0 * k1
    k2 = f(x1, t0 + direction * h0)
    d2 = _rms((k2 - k1) / scale) / h0
    if max(d1, d2) <= 1e-15:
        return 1.0  # field vanishes here; the error estimate still vets the step
    h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1)


def _dopri5(f, x, t0, t1, spec: SolverSpec, stats: SolverStats):
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    t = t0
    k1 = f(x, t)
    h = min(_initial_step(f, x, t0, k1, direction, spec), span)
    err_prev = 1e-4
    last_rejected = False
    ks = [None] * 7
    while direction * (t1 - t) > 0:
        if stats.accepted + stats.rejected >= spec.max_steps:
            raise StiffnessError(f"exceeded {spec.max_steps} steps at t={t}", stats)
        if h < H_MIN:
            raise StiffnessError(f"step size underflow (h={h:.3g}) at t={t}", stats)
        if h >= abs(t1 - t) or abs(t1 - t) - h < 1e-12:
            h = abs(t1 - t)
        hs = direction * h
        ks[0] = k1
        for i in range(1, 7):
            dx = sum(a * k for a, k in zip(A[i], ks[:i]) if a != 0.0)
            ks[i] = f(x + hs * dx, t + C[i] * hs)
        x_new = x + hs * sum(b * k for b, k in zip(B5, ks) if b != 0.0)
        err_vec = hs * sum(e * k for e, k in zip(E, ks) if e != 0.0)
        scale = spec.atol + spec.rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = _rms(err_vec / scale)
        if err <= 1.0:
            fac = SAFETY * max(err, 1e-10) ** (-(0.2 - 0.75 * PI_BETA)) * err_prev ** PI_BETA
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            if last_rejected:
                fac = min(fac, 1.0)
            t = t1 if h == abs(t1 - t) else t + hs
            x = x_new
            k1 = ks[6]  # first-same-as-last
            err_prev = max(err, 1e-4)
            stats.accepted += 1
            stats.t_reached = t
            last_rejected = False
        else:
            fac = max(FAC_MIN, SAFETY * err ** (-0.2))
            stats.rejected += 1
            last_rejected = True
        h = h * fac
    return x, stats


# ----------------------------------------------------------------------------
# guidance and sampling modes

class GuidedField:
    """Counts model forward passes and logs the condition of every call."""

    def __init__(self, model: VelocityField, c: CondLabels, w: float = 1.0):
        if w < 0:
            raise ValueError("guidance strength must be >= 0")
        self.model, self.c, self.w = model, c, w
        self.evals = 0
        self.calls: list[str] = []

    def _eval(self, x, t, c: CondLabels, tag: str) -> np.ndarray:
        self.evals += 1
        self.calls.append(tag)
        return self.model.velocity(x, t, c.expand(len(x)))

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        c = self.c.expand(len(x))
        is_null = c.embedding is None and np.all(c.perturbation == -1) and np.all(c.context == -1)
        if self.w == 1.0 or is_null:
            return self._eval(x, t, c, "null" if is_null else "cond")
        v_null = self._eval(x, t, c.null(), "null")
        if self.w == 0.0:
            return v_null
        v_cond = self._eval(x, t, c, "cond")
        return v_null + self.w * (v_cond - v_null)


def guided_velocity(model: VelocityField, x: np.ndarray, t: float, c: CondLabels, w: float) -> np.ndarray:
    return GuidedField(model, c, w)(x, t)


def _solve_field(field_: GuidedField, x, spec: SolverSpec):
    out, stats = solve_ode(field_, x, spec)
    stats.nfe = field_.evals
    return out, stats


def generate(model: VelocityField, c: CondLabels, w: float = 1.0, spec: SolverSpec | None = None,
             rng: np.random.Generator | None = None, n: int | None = None):
    """Noise-to-data sampling: x0 ~ N(0, I), integrate the guided field 0 -> 1."""
    spec = spec or SolverSpec()
    rng = rng or np.random.default_rng(0)
    n = n or len(c)
    x0 = rng.standard_normal((n,) + tuple(model.sample_shape))
    fwd = SolverSpec(spec.kind, spec.rtol, spec.atol, spec.n_steps, "forward", spec.max_steps)
    return _solve_field(GuidedField(model, c.expand(n), w), x0, fwd)


def transport(model: VelocityField, x0: np.ndarray, c: CondLabels, w: float = 1.0,
              spec: SolverSpec | None = None):
    """Integrate the guided field 0 -> 1 from given source samples (e.g. controls)."""
    spec = spec or SolverSpec()
    fwd = SolverSpec(spec.kind, spec.rtol, spec.atol, spec.n_steps, "forward", spec.max_steps)
    return _solve_field(GuidedField(model, c.expand(len(x0)), w), np.asarray(x0, dtype=np.float64), fwd)


@dataclass
class CounterfactualResult:
    sample: np.ndarray
    latent: np.ndarray
    stats: SolverStats
    reverse_calls: list[str] = field(default_factory=list)
    forward_calls: list[str] = field(default_factory=list)


def counterfactual(model: VelocityField, x_control: np.ndarray, c_new: CondLabels, w: float = 1.0,
                   spec: SolverSpec | None = None, reverse_condition: CondLabels | None = None):
    """Invert ``x_control`` to noise under the null condition, then decode under ``c_new``.

    ``reverse_condition`` replaces the null condition in the inversion
    (non-default; same-condition round trips use it).
    """
    spec = spec or SolverSpec()
    n = len(x_control)
    rev_c = (reverse_condition or CondLabels.full(1)).expand(n)
    rev = GuidedField(model, rev_c, 1.0)
    base = dict(kind=spec.kind, rtol=spec.rtol, atol=spec.atol, n_steps=spec.n_steps, max_steps=spec.max_steps)
    latent, s_rev = _solve_field(rev, x_control, SolverSpec(direction="reverse", **base))
    fwd = GuidedField(model, c_new.expand(n), w)
    sample, s_fwd = _solve_field(fwd, latent, SolverSpec(direction="forward", **base))
    return CounterfactualResult(sample, latent, s_rev + s_fwd, rev.calls, fwd.calls)


def individual_treatment_effect(factual: np.ndarray, counterfactual_: np.ndarray, channel_axis: int | None = None):
    """Channel-averaged difference counterfactual - factual.

    Channels are axis -3 for (..., C, H, W) images and the last axis for flat vectors.
    """
    factual, counterfactual_ = np.asarray(factual), np.asarray(counterfactual_)
    if factual.shape != counterfactual_.shape:
        raise ValueError(f"shape mismatch {factual.shape} vs {counterfactual_.shape}")
    if channel_axis is None:
        channel_axis = -3 if factual.ndim >= 3 else -1
    return (counterfactual_ - factual).mean(axis=channel_axis)


def write_stats_csv(path, rows: list[tuple[int, SolverStats]], config_hash: str = "") -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "nfe", "accepted", "rejected", "config_hash"])
        for sid, st in rows:
            w.writerow([sid, st.nfe, st.accepted, st.rejected, config_hash])
