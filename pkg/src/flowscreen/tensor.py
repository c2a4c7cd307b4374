"""Dense float64 tensors with a tape for reverse-mode differentiation.

Every forward op checks its output for non-finite values and raises
:class:`NumericError` naming the op.  Ops are recorded on the active
:class:`Tape` only when at least one input requires a gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

RMS_EPS = 1e-6


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by op '{op}'")
        self.op = op


class TapeStateError(RuntimeError):
    pass


class ContractError(ValueError):
    """A documented precondition of a public operation was violated."""


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)
    done: bool = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def reset(self) -> None:
        self.nodes.clear()
        self.gradients.clear()
        self.done = False

    def record(self, node: Node) -> None:
        if self.done:
            raise TapeStateError("tape already consumed by backward(); call reset()")
        self.nodes.append(node)

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] = ()) -> list[np.ndarray]:
        """Reverse-accumulate d(loss)/d(leaf).

        Returns one gradient per tensor in ``wrt`` (zeros when unreachable)
        and also stores it on ``leaf.grad``.
        """
        if self.done:
            raise TapeStateError("backward() called twice without reset()")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.done = True
        grads = self.gradients
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        out = []
        for leaf in wrt:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g
            out.append(g)
        return out


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor, wrt: Sequence[Tensor] = (), tape: Tape | None = None) -> list[np.ndarray]:
    tape = tape or active_tape()
    if tape is None:
        raise TapeStateError("no active tape")
    return tape.backward(loss, wrt)


def _finite(op: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericError(op)
    return value


def _make(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    _finite(op, value)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(Node(op, inputs, out, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


def square(x: Tensor) -> Tensor:
    return _make("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def gelu(x: Tensor) -> Tensor:
    z = x.data
    cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return _make("gelu", z * cdf, (x,), lambda g: (g * (cdf + z * pdf),))


def silu(x: Tensor) -> Tensor:
    z = x.data
    sig = expit(z)
    return _make("silu", z * sig, (x,), lambda g: (g * sig * (1.0 + z * (1.0 - sig)),))


# ----------------------------------------------------------------------------
# linear algebra and shape

class MacCounter:
    """Tallies multiply-accumulates of every matmul run inside the context."""

    def __init__(self):
        self.macs = 0

    def __enter__(self) -> "MacCounter":
        _COUNTERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _COUNTERS.remove(self)


_COUNTERS: list[MacCounter] = []


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with leading batch dims; last two dims are (m, k) x (k, n)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if _COUNTERS:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        macs = int(np.prod(lead, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1]
        for c in _COUNTERS:
            c.macs += macs

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic/advanced indexing; gradient scatters back into a zero tensor."""

    key = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(k, (list, np.ndarray)) for k in key)

    def bwd(g):
        out = np.zeros_like(x.data)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _make("getitem", x.data[idx], (x,), bwd)


def concat_lastdim(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[-1] for x in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=-1))

    return _make("concat", np.concatenate([x.data for x in xs], axis=-1), tuple(xs), bwd)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; gradient scatter-adds back."""
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _make("take_rows", table.data[ids], (table,), bwd)


# ----------------------------------------------------------------------------
# reductions and normalisation

def sum_all(x: Tensor) -> Tensor:
    return _make("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def mean_lastdim(x: Tensor) -> Tensor:
    n = x.shape[-1]
    return _make("mean_lastdim", x.data.mean(axis=-1, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def mse(a: Tensor, b) -> Tensor:
    """Mean over all elements of (a - b)^2."""
    b = as_tensor(b)
    diff = a.data - b.data
    n = diff.size

    def bwd(g):
        ga = (2.0 * float(g) / n) * diff
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga, b.shape)

    return _make("mse", np.array(np.mean(diff * diff)), (a, b), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make("softmax", s, (x,), bwd)


def rmsnorm(x: Tensor, gain: Tensor | None = None, eps: float = RMS_EPS) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain, normalising over the last axis."""
    n = x.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    y = x.data * inv
    gd = np.ones(n) if gain is None else gain.data
    inputs = (x,) if gain is None else (x, gain)

    def bwd(g):
        gy = g * gd
        gx = inv * (gy - y * np.mean(gy * y, axis=-1, keepdims=True))
        if gain is None:
            return (gx,)
        return gx, _unbroadcast(g * y, gain.shape)

    return _make("rmsnorm", y * gd, inputs, bwd)


def layernorm(x: Tensor, gain: Tensor | None = None, eps: float = RMS_EPS) -> Tensor:
    return rmsnorm(sub(x, mean_lastdim(x)), gain, eps)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, rng)
    return _make("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


# ----------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``max_coords`` limits the check to a seeded random subset of
    coordinates (large parameter tensors).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
        if out.data.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        (analytic,) = tape.backward(out, [leaf])
    flat = leaf.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = np.random.default_rng(seed).choice(flat.size, max_coords, replace=False)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(leaf.data)).item()
        flat[i] = orig - h
        fm = f(Tensor(leaf.data)).item()
        flat[i] = orig
        num = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - num) / (abs(a) + 1e-12))
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Like :func:`grad_check` but perturbs model parameters in place."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    with Tape() as tape:
        out = loss_fn()
        if out.data.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        grads = tape.backward(out, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + 1e-12))
    return worst
