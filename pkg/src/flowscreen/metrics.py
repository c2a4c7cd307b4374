"""Fréchet distance, KID and RBF-MMD behind a pluggable feature extractor."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .tensor import ContractError

SHRINKAGE = 1e-6



class FeatureExtractor(Protocol):
    dim: int | None

    def __call__(self, batch: np.ndarray) -> np.ndarray: ...


class IdentityFeatures:
    """Flatten each sample."""

    dim = None

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        return batch.reshape(len(batch), -1)


class RandomProjection:
    """Seeded Gaussian projection of flattened samples to ``dim`` features."""

    def __init__(self, in_dim: int, dim: int = 64, seed: int = 0):
        self.dim, self.in_dim = dim, in_dim
        self.w = np.random.default_rng(seed).standard_normal((in_dim, dim)) / np.sqrt(in_dim)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        flat = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
        if flat.shape[1] != self.in_dim:
            raise ContractError(f"expected {self.in_dim} input features, got {flat.shape[1]}")
        return flat @ self.w


def make_extractor(name: str, in_dim: int, dim: int = 64, seed: int = 0) -> FeatureExtractor:
    if name == "identity":
        return IdentityFeatures()
    if name == "random_projection":
        return RandomProjection(in_dim, dim, seed)
    raise ContractError(f"unknown feature extractor {name!r}")


def sqrtm_psd(s: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues are clamped to zero."""
    s = 0.5 * (s + s.T)
    vals, vecs = np.linalg.eigh(s)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_frechet(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    ra = sqrtm_psd(cov_a)
    cross = sqrtm_psd(ra @ cov_b @ ra)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def _moments(f: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    n, d = f.shape
    mu = f.mean(axis=0)
    cov = np.atleast_2d(np.cov(f, rowvar=False, bias=False)) if n > 1 else np.zeros((d, d))
    shrunk = n < d + 1
    if shrunk:
        cov = cov + SHRINKAGE * np.eye(d)
    return mu, cov, shrunk


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, return_flag: bool = False):
    a, b = np.atleast_2d(feats_a), np.atleast_2d(feats_b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, cov_a, sa = _moments(a)
    mu_b, cov_b, sb = _moments(b)
    val = gaussian_frechet(mu_a, cov_a, mu_b, cov_b)
    return (val, sa or sb) if return_flag else val


def poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid_unbiased(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel on the full Gram matrices."""
    a, b = np.atleast_2d(feats_a), np.atleast_2d(feats_b)
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise ContractError("KID needs at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    kaa, kbb, kab = poly_kernel(a, a), poly_kernel(b, b), poly_kernel(a, b)
    term_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    return float(term_a + term_b - 2.0 * kab.mean())


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    z = np.concatenate([a, b])
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    med = np.median(d2[np.triu_indices(len(z), 1)])
    return float(np.sqrt(0.5 * med)) if med > 0 else 1.0


def mmd_rbf(samples_a: np.ndarray, samples_b: np.ndarray, bandwidth: float | str = "median") -> float:
    """Biased (V-statistic) MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 bandwidth^2))."""
    if len(samples_a) == 0 or len(samples_b) == 0:
        raise ContractError("MMD needs non-empty sample sets")
    a = np.asarray(samples_a, dtype=np.float64).reshape(len(samples_a), -1)
    b = np.asarray(samples_b, dtype=np.float64).reshape(len(samples_b), -1)
    if bandwidth == "median":
        bandwidth = median_bandwidth(a, b)
    if not bandwidth > 0:
        raise ContractError("bandwidth must be positive")
    g = 1.0 / (2.0 * bandwidth ** 2)

    def k(x, y):
        d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
        return np.exp(-g * np.maximum(d2, 0.0))

    return float(k(a, a).mean() + k(b, b).mean() - 2.0 * k(a, b).mean())


def bootstrap_se(stat, a: np.ndarray, b: np.ndarray, n_boot: int = 200, seed: int = 0) -> float:
    """Standard error of ``stat(a, b)`` by resampling rows of both sets."""
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_boot):
        ia = rng.integers(len(a), size=len(a))
        ib = rng.integers(len(b), size=len(b))
        vals.append(stat(a[ia], b[ib]))
    return float(np.std(vals, ddof=1))


@dataclass
class MetricReport:
    frechet: float
    kid: float
    kid_scaled: float
    mmd_rbf: float
    n_real: int
    n_gen: int
    shrinkage: bool = False

    FIELDS = ("frechet", "kid", "kid_scaled", "mmd_rbf", "n_real", "n_gen", "shrinkage")

    def csv_row(self) -> list:
        return [repr(v) if isinstance(v, float) else int(v) for v in (getattr(self, f) for f in self.FIELDS)]

    def to_text(self) -> str:
        return "\n".join(f"{f}: {getattr(self, f)!r}" for f in self.FIELDS) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(self.FIELDS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def evaluate(real: np.ndarray, generated: np.ndarray, extractor: FeatureExtractor | None = None,
             bandwidth: float | str = "median") -> MetricReport:
    extractor = extractor or IdentityFeatures()
    fr, fg = extractor(real), extractor(generated)
    fd, shrunk = frechet_distance(fr, fg, return_flag=True)
    kid = kid_unbiased(fr, fg)
    return MetricReport(fd, kid, kid * 1000.0, mmd_rbf(fr, fg, bandwidth), len(fr), len(fg), shrunk)
