"""Conditioning embedder, velocity networks (MLP, MiT) and the perturbation adaptor."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

NULL = -1
COND_DROP_PROB = 0.15
TIME_SCALE = 20.0



@dataclass
class CondLabels:
    """Batched condition labels; ``NULL`` marks the null token in a slot.

    ``embedding`` (rows of the perturbation-embedding space) replaces the
    perturbation id; it is the adaptor path for unseen perturbations.
    """

    perturbation: np.ndarray
    context: np.ndarray
    embedding: Tensor | np.ndarray | None = None

    def __post_init__(self):
        self.perturbation = np.atleast_1d(np.asarray(self.perturbation, dtype=np.int64))
        self.context = np.atleast_1d(np.asarray(self.context, dtype=np.int64))
        n = max(len(self.perturbation), len(self.context))
        if len(self.perturbation) == 1 and n > 1:
            self.perturbation = np.repeat(self.perturbation, n)
        if len(self.context) == 1 and n > 1:
            self.context = np.repeat(self.context, n)
        if len(self.perturbation) != len(self.context):
            raise ContractError("perturbation and context label counts differ")
        if self.embedding is not None and np.any(self.perturbation != NULL):
            raise ContractError("set either perturbation ids or an embedding, not both")

    @classmethod
    def full(cls, n: int, perturbation: int = NULL, context: int = NULL) -> "CondLabels":
        return cls(np.full(n, perturbation), np.full(n, context))

    def __len__(self) -> int:
        return len(self.perturbation)

    def null(self) -> "CondLabels":
        return CondLabels.full(len(self))

    def take(self, idx) -> "CondLabels":
        emb = self.embedding
        if emb is not None:
            emb = T.getitem(emb, idx) if isinstance(emb, Tensor) else np.asarray(emb)[idx]
        return CondLabels(self.perturbation[idx], self.context[idx], emb)

    def expand(self, n: int) -> "CondLabels":
        """Broadcast a single label to ``n`` rows."""
        if len(self) == n:
            return self
        if len(self) != 1:
            raise ContractError(f"cannot expand {len(self)} labels to {n}")
        emb = None if self.embedding is None else np.repeat(np.asarray(
            self.embedding.data if isinstance(self.embedding, Tensor) else self.embedding), n, axis=0)
        return CondLabels(np.repeat(self.perturbation, n), np.repeat(self.context, n), emb)


def timestep_embedding(t, dim: int, max_period: float = 10000.0, scale: float = TIME_SCALE) -> np.ndarray:
    """Sinusoidal features of ``scale * t`` (t in [0, 1]); shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * scale
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=-1)
    return emb


class Module:
    kind = "module"

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        p = T.parameter(value, name=name)
        self.params[name] = p
        return p

    def _linear(self, name: str, fan_in: int, fan_out: int, zero: bool = False, std: float | None = None):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            w = self._rng.standard_normal((fan_in, fan_out)) * (std if std is not None else 1.0 / math.sqrt(fan_in))
        self._param(f"{name}.w", w)
        self._param(f"{name}.b", np.zeros(fan_out))

    def lin(self, name: str, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def num_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ContractError(f"state dict keys differ: {sorted(missing)}")
        for k, v in state.items():
            if self.params[k].shape != np.shape(v):
                raise ContractError(f"shape mismatch for {k}: {self.params[k].shape} vs {np.shape(v)}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def config(self) -> dict:
        raise NotImplementedError


class ConditionEmbedder:
    """Sum of per-slot learnable embeddings; the last table row is the null token."""

    def __init__(self, owner: Module, n_pert: int, n_ctx: int, dim: int, std: float = 0.5):
        self.owner, self.n_pert, self.n_ctx, self.dim = owner, n_pert, n_ctx, dim
        owner._param("cond.pert", owner._rng.standard_normal((n_pert + 1, dim)) * std)
        owner._param("cond.ctx", owner._rng.standard_normal((n_ctx + 1, dim)) * std)

    def _ids(self, ids: np.ndarray, n: int, slot: str) -> np.ndarray:
        bad = (ids != NULL) & ((ids < 0) | (ids >= n))
        if np.any(bad):
            raise ContractError(f"{slot} id {int(ids[bad][0])} outside [0, {n})")
        return np.where(ids == NULL, n, ids)

    def __call__(self, c: CondLabels, train: bool = False, rng: np.random.Generator | None = None,
                 drop_prob: float = COND_DROP_PROB) -> Tensor:
        p_ids = self._ids(c.perturbation, self.n_pert, "perturbation")
        e_ids = self._ids(c.context, self.n_ctx, "context")
        drop_p = np.zeros(len(c), dtype=bool)
        if train and drop_prob > 0:
            drop_p = rng.random(len(c)) < drop_prob
            drop_e = rng.random(len(c)) < drop_prob
            p_ids = np.where(drop_p, self.n_pert, p_ids)
            e_ids = np.where(drop_e, self.n_ctx, e_ids)
        table_p = self.owner.params["cond.pert"]
        pert = T.take_rows(table_p, p_ids)
        if c.embedding is not None:
            emb = T.as_tensor(c.embedding)
            if emb.shape != (len(c), self.dim):
                raise ContractError(f"embedding shape {emb.shape} != {(len(c), self.dim)}")
            keep = (~drop_p).astype(np.float64)[:, None]
            pert = T.add(T.mul(emb, keep), T.mul(pert, 1.0 - keep))
        return T.add(pert, T.take_rows(self.owner.params["cond.ctx"], e_ids))


class VelocityField(Module):
    """Base class: ``evaluate(x_t, t, c)`` returns a velocity with x_t's shape."""

    drop_prob = COND_DROP_PROB

    def evaluate(self, x, t, c: CondLabels, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs) -> Tensor:
        return self.evaluate(*args, **kwargs)

    def velocity(self, x: np.ndarray, t, c: CondLabels) -> np.ndarray:
        """Eval-mode numpy convenience used by the ODE solvers."""
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
        return self.evaluate(Tensor(x), t, c.expand(len(x))).data


class MLPVelocity(VelocityField):
    kind = "mlp"

    def __init__(self, dim: int, n_pert: int, n_ctx: int, hidden: int = 128, layers: int = 3,
                 cond_dim: int = 32, time_dim: int = 32, zero_init_final: bool = True, seed: int = 0):
        super().__init__(seed)
        if not 2 <= layers <= 4:
            raise ContractError("MLP velocity uses 2-4 hidden layers")
        if dim > 64:
            raise ContractError("MLP velocity is for flat inputs with d <= 64")
        self.dim, self.n_pert, self.n_ctx = dim, n_pert, n_ctx
        self.hidden, self.layers, self.cond_dim, self.time_dim = hidden, layers, cond_dim, time_dim
        self.zero_init_final = zero_init_final
        self.embedder = ConditionEmbedder(self, n_pert, n_ctx, cond_dim)
        fan = dim + time_dim + cond_dim
        for i in range(layers):
            self._linear(f"fc{i}", fan if i == 0 else hidden, hidden)
        self._linear("out", hidden, dim, zero=zero_init_final)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return (self.dim,)

    def config(self) -> dict:
        return dict(dim=self.dim, n_pert=self.n_pert, n_ctx=self.n_ctx, hidden=self.hidden,
                    layers=self.layers, cond_dim=self.cond_dim, time_dim=self.time_dim,
                    zero_init_final=self.zero_init_final)

    def evaluate(self, x, t, c: CondLabels, train: bool = False, rng=None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise T.DimensionError(f"expected (B, {self.dim}) input, got {x.shape}")
        temb = timestep_embedding(np.broadcast_to(t, (x.shape[0],)), self.time_dim)
        cond = self.embedder(c, train, rng, self.drop_prob)
        h = T.concat_lastdim([x, Tensor(temb), cond])
        for i in range(self.layers):
            h = T.gelu(self.lin(f"fc{i}", h))
        return self.lin("out", h)


@dataclass
class MiTConfig:
    depth: int = 4
    heads: int = 2
    hidden: int = 32
    patch: int = 2
    proj_dropout: float = 0.1
    use_rmsnorm: bool = True
    use_long_skips: bool = True
    mlp_ratio: int = 4
    time_dim: int = 32
    # stability-harness toggles
    attn_dropout: float = 0.0
    mlp_dropout: float = 0.0
    block_skip: bool = False
    drop_path: float = 0.0
    ada_rms: bool = False

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ContractError("hidden must be divisible by heads")
        if self.use_long_skips and self.depth % 2:
            raise ContractError("long-range skips need an even depth")
        for name in ("proj_dropout", "attn_dropout", "mlp_dropout", "drop_path"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ContractError(f"{name} must be in [0, 1)")


XL2 = MiTConfig(depth=28, heads=16, hidden=1152, patch=2)


class MiT(VelocityField):
    """Diffusion transformer with RMSNorm, projection dropout and long-range skips."""

    kind = "mit"

    def __init__(self, channels: int, size: int, n_pert: int, n_ctx: int,
                 cfg: MiTConfig | None = None, seed: int = 0):
        super().__init__(seed)
        cfg = cfg or MiTConfig()
        if size % cfg.patch:
            raise T.DimensionError(f"image size {size} not divisible by patch {cfg.patch}")
        self.cfg, self.channels, self.size, self.n_pert, self.n_ctx = cfg, channels, size, n_pert, n_ctx
        h, p = cfg.hidden, cfg.patch
        self.grid = size // p
        self.embedder = ConditionEmbedder(self, n_pert, n_ctx, h)
        self._linear("x_embed", p * p * channels, h)
        self._linear("t_embed1", cfg.time_dim, h)
        self._linear("t_embed2", h, h)
        self.pos = _pos_embed_2d(h, self.grid)
        n_mod = 4 if cfg.ada_rms else 6
        for i in range(cfg.depth):
            b = f"blocks.{i}"
            self._param(f"{b}.norm1", np.ones(h))
            self._param(f"{b}.norm2", np.ones(h))
            self._linear(f"{b}.ada1", h, h)
            self._linear(f"{b}.ada2", h, n_mod * h, zero=True)
            self._linear(f"{b}.qkv", h, 3 * h)
            # keys carry no bias: it cancels in the softmax and only adds a null direction
            self.params[f"{b}.qkv.b"] = self.params.pop(f"{b}.qkv.b")
            self.params[f"{b}.qkv.b"].data = np.zeros(2 * h)
            self._linear(f"{b}.proj", h, h)
            self._linear(f"{b}.fc1", h, cfg.mlp_ratio * h)
            self._linear(f"{b}.fc2", cfg.mlp_ratio * h, h)
            if cfg.use_long_skips and i >= cfg.depth // 2:
                w = np.concatenate([np.eye(h), self._rng.standard_normal((h, h)) / math.sqrt(2 * h)])
                self._param(f"{b}.skip.w", w)
                self._param(f"{b}.skip.b", np.zeros(h))
        self._param("final.norm", np.ones(h))
        self._linear("final.ada", h, (1 if cfg.ada_rms else 2) * h, zero=True)
        self._linear("final.out", h, p * p * channels, zero=True)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return (self.channels, self.size, self.size)

    def config(self) -> dict:
        return dict(channels=self.channels, size=self.size, n_pert=self.n_pert,
                    n_ctx=self.n_ctx, cfg=asdict(self.cfg))

    # -- pieces ---------------------------------------------------------
    def patchify(self, x: Tensor) -> Tensor:
        b, c, p, g = x.shape[0], self.channels, self.cfg.patch, self.grid
        x = T.reshape(x, (b, c, g, p, g, p))
        x = T.transpose(x, (0, 2, 4, 3, 5, 1))
        return T.reshape(x, (b, g * g, p * p * c))

    def unpatchify(self, x: Tensor) -> Tensor:
        b, c, p, g = x.shape[0], self.channels, self.cfg.patch, self.grid
        x = T.reshape(x, (b, g, g, p, p, c))
        x = T.transpose(x, (0, 5, 1, 3, 2, 4))
        return T.reshape(x, (b, c, g * p, g * p))

    def _norm(self, x: Tensor, gain: Tensor) -> Tensor:
        return T.rmsnorm(x, gain) if self.cfg.use_rmsnorm else T.layernorm(x, gain)

    @staticmethod
    def _modulate(x: Tensor, shift: Tensor | None, scale: Tensor) -> Tensor:
        b, h = scale.shape
        out = T.mul(x, T.add(T.reshape(scale, (b, 1, h)), 1.0))
        if shift is not None:
            out = T.add(out, T.reshape(shift, (b, 1, h)))
        return out

    def _attention(self, name: str, x: Tensor, train: bool, rng) -> Tensor:
        cfg = self.cfg
        b, n, h = x.shape
        dh = h // cfg.heads
        bq, bv = (T.getitem(self.params[f"{name}.qkv.b"], slice(i * h, (i + 1) * h)) for i in range(2))
        bias = T.concat_lastdim([bq, Tensor(np.zeros(h)), bv])
        qkv = T.add(T.matmul(x, self.params[f"{name}.qkv.w"]), bias)
        qkv = T.reshape(qkv, (b, n, 3, cfg.heads, dh))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = (T.getitem(qkv, i) for i in range(3))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.dropout(T.softmax_lastdim(scores), cfg.attn_dropout, rng, train)
        out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, n, h))
        return T.dropout(self.lin(f"{name}.proj", out), cfg.proj_dropout, rng, train)

    def _drop_path(self, x: Tensor, train: bool, rng) -> Tensor:
        p = self.cfg.drop_path
        if not train or p == 0.0:
            return x
        keep = (rng.random((x.shape[0], 1, 1)) >= p) / (1.0 - p)
        return T.mul(x, keep)

    def _block(self, i: int, x: Tensor, c: Tensor, train: bool, rng) -> Tensor:
        cfg, b = self.cfg, f"blocks.{i}"
        h = cfg.hidden
        mod = self.lin(f"{b}.ada2", T.silu(self.lin(f"{b}.ada1", T.silu(c))))
        chunks = [T.getitem(mod, (slice(None), slice(j * h, (j + 1) * h))) for j in range(mod.shape[1] // h)]
        if cfg.ada_rms:
            sh1, sh2 = None, None
            sc1, g1, sc2, g2 = chunks
        else:
            sh1, sc1, g1, sh2, sc2, g2 = chunks
        a = self._attention(b, self._modulate(self._norm(x, self.params[f"{b}.norm1"]), sh1, sc1), train, rng)
        x = T.add(x, self._drop_path(T.mul(a, T.reshape(g1, (x.shape[0], 1, h))), train, rng))
        m = self._modulate(self._norm(x, self.params[f"{b}.norm2"]), sh2, sc2)
        m = T.dropout(T.gelu(self.lin(f"{b}.fc1", m)), cfg.mlp_dropout, rng, train)
        m = self.lin(f"{b}.fc2", m)
        return T.add(x, self._drop_path(T.mul(m, T.reshape(g2, (x.shape[0], 1, h))), train, rng))

    def evaluate(self, x, t, c: CondLabels, train: bool = False, rng=None) -> Tensor:
        cfg = self.cfg
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.size, self.size):
            raise T.DimensionError(
                f"expected (B, {self.channels}, {self.size}, {self.size}) input, got {x.shape}")
        bsz = x.shape[0]
        temb = Tensor(timestep_embedding(np.broadcast_to(t, (bsz,)), cfg.time_dim))
        temb = self.lin("t_embed2", T.silu(self.lin("t_embed1", temb)))
        cvec = T.add(self.embedder(c, train, rng, self.drop_prob), temb)
        h = T.add(self.lin("x_embed", self.patchify(x)), self.pos)
        skips: list[Tensor] = []
        prev = None
        for i in range(cfg.depth):
            if cfg.use_long_skips and i >= cfg.depth // 2:
                h = self.lin(f"blocks.{i}.skip", T.concat_lastdim([h, skips.pop()]))
            out = self._block(i, h, cvec, train, rng)
            if cfg.block_skip and prev is not None:
                out = T.add(out, prev)
            prev = h
            h = out
            if cfg.use_long_skips and i < cfg.depth // 2:
                skips.append(h)
        mod = self.lin("final.ada", T.silu(cvec))
        hd = cfg.hidden
        if cfg.ada_rms:
            shift, scl = None, mod
        else:
            shift = T.getitem(mod, (slice(None), slice(0, hd)))
            scl = T.getitem(mod, (slice(None), slice(hd, 2 * hd)))
        h = self._modulate(T.rmsnorm(h, self.params["final.norm"]), shift, scl)
        return self.unpatchify(self.lin("final.out", h))


def _pos_embed_2d(dim: int, grid: int) -> np.ndarray:
    """Fixed 2-D sin/cos position table, shape (grid*grid, dim)."""
    def one_d(d, pos):
        omega = 1.0 / 10000 ** (np.arange(d // 2) / (d / 2.0))
        out = np.outer(pos, omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    ys, xs = np.meshgrid(np.arange(grid, dtype=np.float64), np.arange(grid, dtype=np.float64), indexing="ij")
    half = dim // 2
    emb = np.concatenate([one_d(half, ys.reshape(-1)), one_d(dim - half, xs.reshape(-1))], axis=1)
    return emb[:, :dim] if emb.shape[1] >= dim else np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))


class Adaptor(Module):
    """Small MLP from external perturbation features (and optional dose) to the
    base model's perturbation-embedding space."""

    kind = "adaptor"

    def __init__(self, feat_dim: int, cond_dim: int, hidden: int = 64, n_hidden: int = 1,
                 dose_dim: int = 0, seed: int = 0):
        super().__init__(seed)
        self.feat_dim, self.cond_dim, self.hidden = feat_dim, cond_dim, hidden
        self.n_hidden, self.dose_dim = n_hidden, dose_dim
        fan = feat_dim + dose_dim
        for i in range(n_hidden):
            self._linear(f"fc{i}", fan if i == 0 else hidden, hidden)
        self._linear("out", hidden if n_hidden else fan, cond_dim)

    def config(self) -> dict:
        return dict(feat_dim=self.feat_dim, cond_dim=self.cond_dim, hidden=self.hidden,
                    n_hidden=self.n_hidden, dose_dim=self.dose_dim)

    def start_from(self, embedding: np.ndarray) -> None:
        """Zero the output layer so every input maps to ``embedding`` at step 0."""
        self.params["out.w"].data = np.zeros_like(self.params["out.w"].data)
        self.params["out.b"].data = np.array(embedding, dtype=np.float64).reshape(self.cond_dim)

    def __call__(self, phi, dose=None) -> Tensor:
        phi = T.as_tensor(phi)
        if phi.ndim != 2 or phi.shape[1] != self.feat_dim:
            raise ContractError(f"expected features of shape (B, {self.feat_dim}), got {phi.shape}")
        h = phi
        if self.dose_dim:
            dose = np.zeros(phi.shape[0]) if dose is None else np.broadcast_to(dose, (phi.shape[0],))
            h = T.concat_lastdim([h, Tensor(timestep_embedding(dose, self.dose_dim))])
        for i in range(self.n_hidden):
            h = T.gelu(self.lin(f"fc{i}", h))
        return self.lin("out", h)


# ----------------------------------------------------------------------------
# parameter and FLOP accounting (fused multiply-accumulate convention)

class Counts(NamedTuple):
    params: int            # excluding the conditioning tables
    cond_params: int
    flops: int             # MACs of parameterised layers, per forward per sample
    attention_flops: int   # MACs of QK^T and AV

    @property
    def total_flops(self) -> int:
        return self.flops + self.attention_flops


def linear_counts(fan_in: int, fan_out: int) -> tuple[int, int]:
    return fan_in * fan_out + fan_out, fan_in * fan_out


def mit_counts(cfg: MiTConfig, channels: int, size: int, n_pert: int = 0, n_ctx: int = 0) -> Counts:
    h, p = cfg.hidden, cfg.patch
    n_tok = (size // p) ** 2
    params = flops = 0

    def lin(fi, fo, per_token=True):
        nonlocal params, flops
        pc, fc = linear_counts(fi, fo)
        params += pc
        flops += fc * (n_tok if per_token else 1)

    lin(p * p * channels, h)
    lin(cfg.time_dim, h, False)
    lin(h, h, False)
    n_mod = 4 if cfg.ada_rms else 6
    for i in range(cfg.depth):
        params += 2 * h
        lin(h, h, False)
        lin(h, n_mod * h, False)
        lin(h, 3 * h)
        params -= h  # no key bias
        lin(h, h)
        lin(h, cfg.mlp_ratio * h)
        lin(cfg.mlp_ratio * h, h)
        if cfg.use_long_skips and i >= cfg.depth // 2:
            lin(2 * h, h)
    params += h
    lin(h, (1 if cfg.ada_rms else 2) * h, False)
    lin(h, p * p * channels)
    attention = cfg.depth * 2 * n_tok * n_tok * h
    cond = (n_pert + 1 + n_ctx + 1) * h
    return Counts(params, cond, flops, attention)


def mlp_counts(m: MLPVelocity) -> Counts:
    params = flops = 0
    fan = m.dim + m.time_dim + m.cond_dim
    for i in range(m.layers):
        pc, fc = linear_counts(fan if i == 0 else m.hidden, m.hidden)
        params, flops = params + pc, flops + fc
    pc, fc = linear_counts(m.hidden, m.dim)
    cond = (m.n_pert + 1 + m.n_ctx + 1) * m.cond_dim
    return Counts(params + pc, cond, flops + fc, 0)


def count_params_flops(model: Module) -> Counts:
    if isinstance(model, MiT):
        return mit_counts(model.cfg, model.channels, model.size, model.n_pert, model.n_ctx)
    if isinstance(model, MLPVelocity):
        return mlp_counts(model)
    if isinstance(model, Adaptor):
        params = flops = 0
        fan = model.feat_dim + model.dose_dim
        dims = [fan] + [model.hidden] * model.n_hidden + [model.cond_dim]
        for a, b in zip(dims[:-1], dims[1:]):
            pc, fc = linear_counts(a, b)
            params, flops = params + pc, flops + fc
        return Counts(params, 0, flops, 0)
    raise TypeError(f"no counter for {type(model).__name__}")


MODEL_KINDS = {"mlp": MLPVelocity, "mit": MiT, "adaptor": Adaptor}


def build_model(kind: str, config: dict, seed: int = 0) -> Module:
    if kind == "mit":
        cfg = dict(config)
        mcfg = MiTConfig(**cfg.pop("cfg", {}))
        return MiT(cfg=mcfg, seed=seed, **cfg)
    return MODEL_KINDS[kind](**config, seed=seed)
