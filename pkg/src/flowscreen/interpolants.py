"""Interpolants between a source sample x0 and a target sample x1.

All functions take ``t`` either as a scalar or as an array broadcastable
against the leading (batch) axis of ``x0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

BB_T_MIN = 1e-3


class Kind(str, Enum):
    LINEAR = "linear"
    VP = "vp"
    BROWNIAN_BRIDGE = "brownian_bridge"


class SingularityError(ValueError):
    pass


@dataclass(frozen=True)
class Interpolant:
    kind: Kind = Kind.LINEAR
    k: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.BROWNIAN_BRIDGE and not self.k > 0:
            raise ValueError("Brownian bridge needs noise scale k > 0")

    @property
    def t_min(self) -> float:
        return BB_T_MIN if self.kind is Kind.BROWNIAN_BRIDGE else 0.0

    @property
    def uses_noise(self) -> bool:
        return self.kind is Kind.BROWNIAN_BRIDGE

    def sample_t(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = self.t_min
        return rng.uniform(lo, 1.0 - lo, size=n)

    def label(self) -> str:
        if self.kind is Kind.BROWNIAN_BRIDGE:
            return f"bb_k{self.k:g}"
        return self.kind.value


def _bcast(t, x: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (x.ndim - t.ndim))


def _check_t(t) -> None:
    t = np.asarray(t)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"t must lie in [0, 1], got range [{t.min()}, {t.max()}]")


def interpolate(ip: Interpolant, x0, x1, t, eps=None) -> np.ndarray:
    _check_t(t)
    x0, x1 = np.asarray(x0, np.float64), np.asarray(x1, np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"x0 {x0.shape} and x1 {x1.shape} differ in shape")
    tt = _bcast(t, x0)
    if ip.kind is Kind.VP:
        # sin of the complementary angle keeps both endpoints exact (cos(pi/2) is not 0 in floats)
        return x1 * np.sin(0.5 * math.pi * tt) + x0 * np.sin(0.5 * math.pi * (1.0 - tt))
    out = tt * x1 + (1.0 - tt) * x0
    if ip.kind is Kind.BROWNIAN_BRIDGE:
        out = out + np.asarray(eps) * ip.k * np.sqrt(2.0 * tt * (1.0 - tt))
    return out


def target_velocity(ip: Interpolant, x0, x1, t, eps=None) -> np.ndarray:
    """Time derivative of :func:`interpolate` at fixed (x0, x1, eps)."""
    _check_t(t)
    x0, x1 = np.asarray(x0, np.float64), np.asarray(x1, np.float64)
    tt = _bcast(t, x0)
    if ip.kind is Kind.LINEAR:
        return np.broadcast_to(x1 - x0, np.broadcast_shapes(x0.shape, np.shape(tt))).copy()
    if ip.kind is Kind.VP:
        h = 0.5 * math.pi
        return h * (x1 * np.cos(h * tt) - x0 * np.cos(h * (1.0 - tt)))
    if np.any((tt <= 0.0) | (tt >= 1.0)):
        raise SingularityError("Brownian-bridge velocity is singular at t in {0, 1}")
    return (x1 - x0) + np.asarray(eps) * ip.k * (1.0 - 2.0 * tt) / np.sqrt(2.0 * tt * (1.0 - tt))
