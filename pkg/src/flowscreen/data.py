"""Synthetic conditional screens, the tensor file format, cp2rgb and FLOP estimates."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import CondLabels
from .tensor import ContractError

MAGIC = b"FLT1"
CONTROL = 0

# Rows: input channel; columns: R, G, B.
CP_WEIGHTS = np.array([
    [0.0, 0.0, 1.0],  # Hoechst -> blue
    [0.0, 1.0, 0.0],  # ConA -> green
    [1.0, 0.0, 0.0],  # Phalloidin -> red
    [0.0, 0.5, 0.5],  # Syto14 -> cyan
    [0.5, 0.0, 0.5],  # MitoTracker -> magenta
    [0.5, 0.5, 0.0],  # WGA -> yellow
])


class FormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte {offset})")
        self.offset = offset



# ----------------------------------------------------------------------------
# synthetic screen

@dataclass
class SyntheticScreenSpec:
    """Gaussian conditional family ``y = s_e * (mu_p + sigma * eps) + b_e``.

    ``mu[p]`` is the ground-truth embedding of perturbation ``p`` (``mu[0] = 0``
    is the control).  ``phi`` holds the external feature vector of each
    perturbation used by the adaptor.
    """

    mu: np.ndarray
    offsets: np.ndarray
    scales: np.ndarray
    sigma: float
    holdout: tuple[int, ...] = ()
    phi: np.ndarray | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if np.any(self.mu[CONTROL] != 0):
            raise ContractError("control perturbation must have zero mean shift")
        if np.any(self.scales <= 0):
            raise ContractError("context scales must be positive")
        if any(not 1 <= h < self.n_pert for h in self.holdout):
            raise ContractError("holdout ids must lie in 1..P-1")

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    @property
    def n_pert(self) -> int:
        return self.mu.shape[0]

    @property
    def n_ctx(self) -> int:
        return self.offsets.shape[0]

    @property
    def seen(self) -> list[int]:
        return [p for p in range(self.n_pert) if p not in set(self.holdout)]

    def mean(self, p: int, e: int) -> np.ndarray:
        return self.scales[e] * self.mu[p] + self.offsets[e]

    def cov(self, p: int, e: int) -> np.ndarray:
        return np.diag((self.scales[e] * self.sigma) ** 2)

    def manifest(self) -> dict:
        return {
            "params": self.params, "seed": self.seed, "sigma": self.sigma,
            "holdout": list(self.holdout), "seen": self.seen,
            "mu": self.mu.tolist(), "offsets": self.offsets.tolist(), "scales": self.scales.tolist(),
        }


def make_screen(dim: int = 2, n_pert: int = 8, n_ctx: int = 3, mu_scale: float = 2.0,
                offset_scale: float = 1.0, scale_jitter: float = 0.3, sigma: float = 0.5,
                holdout: tuple[int, ...] = (), phi_noise: float = 0.0, phi_kind: str = "informative",
                seed: int = 0) -> SyntheticScreenSpec:
    """Random screen; context 0 is neutral (zero offset, unit scale)."""
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, mu_scale, (n_pert, dim))
    mu[CONTROL] = 0.0
    offsets = rng.normal(0.0, offset_scale, (n_ctx, dim))
    scales = np.exp(rng.uniform(-scale_jitter, scale_jitter, (n_ctx, dim)))
    offsets[0], scales[0] = 0.0, 1.0
    if phi_kind == "informative":
        phi = mu + phi_noise * rng.standard_normal(mu.shape)
    elif phi_kind == "random":
        phi = mu_scale * rng.standard_normal(mu.shape)
    else:
        raise ContractError(f"unknown phi_kind {phi_kind!r}")
    params = dict(dim=dim, n_pert=n_pert, n_ctx=n_ctx, mu_scale=mu_scale, offset_scale=offset_scale,
                  scale_jitter=scale_jitter, sigma=sigma, phi_noise=phi_noise, phi_kind=phi_kind)
    return SyntheticScreenSpec(mu, offsets, scales, sigma, tuple(holdout), phi, seed, params)


def sample_screen(spec: SyntheticScreenSpec, perturbation: int, context: int, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    if not 0 <= perturbation < spec.n_pert:
        raise ContractError(f"perturbation id {perturbation} outside [0, {spec.n_pert})")
    if not 0 <= context < spec.n_ctx:
        raise ContractError(f"context id {context} outside [0, {spec.n_ctx})")
    eps = rng.standard_normal((n, spec.dim))
    return spec.scales[context] * (spec.mu[perturbation] + spec.sigma * eps) + spec.offsets[context]


@dataclass
class LabelledSet:
    x: np.ndarray
    perturbation: np.ndarray
    context: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


def sample_dataset(spec: SyntheticScreenSpec, perturbations, n_per: int,
                   rng: np.random.Generator, contexts=None) -> LabelledSet:
    """``n_per`` samples for every (perturbation, context) pair."""
    contexts = range(spec.n_ctx) if contexts is None else contexts
    xs, ps, es = [], [], []
    for p in perturbations:
        for e in contexts:
            xs.append(sample_screen(spec, p, e, n_per, rng))
            ps.append(np.full(n_per, p))
            es.append(np.full(n_per, e))
    return LabelledSet(np.concatenate(xs), np.concatenate(ps), np.concatenate(es))


def control_pool(spec: SyntheticScreenSpec, n_per_context: int, rng: np.random.Generator) -> dict[int, np.ndarray]:
    return {e: sample_screen(spec, CONTROL, e, n_per_context, rng) for e in range(spec.n_ctx)}


# ----------------------------------------------------------------------------
# cell-paint projection and compute estimates

def cp2rgb(images: np.ndarray) -> np.ndarray:
    """Project (B, 6, H, W) cell-paint stacks to (B, 3, H, W) RGB."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 6:
        raise ContractError(f"cp2rgb expects shape (B, 6, H, W), got {images.shape}")
    return np.einsum("bchw,cn->bnhw", images, CP_WEIGHTS.astype(images.dtype))


def estimate_train_flops(flops_per_fwd_per_image: float, global_batch: float, steps: float) -> float:
    """Training compute in ExaFLOPs: forward FLOPs x batch x steps x 3 (fwd + 2x bwd)."""
    if min(flops_per_fwd_per_image, global_batch, steps) < 0:
        raise ContractError("FLOP estimate inputs must be non-negative")
    return flops_per_fwd_per_image * global_batch * steps * 3 / 1e18


# ----------------------------------------------------------------------------
# tensor files

def tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ContractError("refusing to write non-finite values")
    head = MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    return head + np.ascontiguousarray(t, dtype="<f8").tobytes()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise FormatError("truncated header", len(raw))
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}", 0)
    (rank,) = struct.unpack_from("<I", raw, 4)
    end = 8 + 4 * rank
    if len(raw) < end:
        raise FormatError(f"truncated extents for rank {rank}", len(raw))
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    n = int(np.prod(shape, dtype=np.int64))
    if len(raw) != end + 8 * n:
        where = min(len(raw), end + 8 * n)
        raise FormatError(f"payload is {len(raw) - end} bytes, expected {8 * n}", where)
    return np.frombuffer(raw, dtype="<f8", offset=end, count=n).astype(np.float64).reshape(shape)


def write_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(t))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


class DatasetSampler:
    """Minibatches drawn with replacement from a labelled set."""

    def __init__(self, data: LabelledSet):
        self.data = data

    def __call__(self, n: int, rng: np.random.Generator):
        idx = rng.integers(len(self.data), size=n)
        d = self.data
        return d.x[idx], CondLabels(d.perturbation[idx], d.context[idx])
