"""Run configuration: nested dataclasses loaded from JSON with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, msg: str, keys: list[str] | None = None):
        super().__init__(msg)
        self.keys = keys or []


@dataclass
class DataConfig:
    dim: int = 2
    n_pert: int = 6
    n_ctx: int = 3
    mu_scale: float = 2.0
    offset_scale: float = 1.0
    scale_jitter: float = 0.3
    sigma: float = 0.5
    holdout: list[int] = field(default_factory=list)
    phi_noise: float = 0.0
    phi_kind: str = "informative"
    n_train_per: int = 200
    n_eval_per: int = 300
    control_pool_size: int = 5
    means: list = field(default_factory=list)  # explicit per-perturbation means; overrides the random draw
    image_channels: int = 0  # > 0 reshapes samples to (C, S, S) images
    image_size: int = 0


@dataclass
class InterpolantConfig:
    kind: str = "linear"
    k: float = 0.0


@dataclass
class FlowConfig:
    kind: str = "noise_to_data"
    noise_aug_prob: float = 0.5


@dataclass
class ModelConfig:
    kind: str = "mlp"
    hidden: int = 128
    layers: int = 3
    cond_dim: int = 32
    time_dim: int = 32
    # MiT only
    depth: int = 4
    heads: int = 2
    patch: int = 2
    proj_dropout: float = 0.1
    use_rmsnorm: bool = True
    use_long_skips: bool = True


@dataclass
class SolverConfig:
    kind: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-5
    n_steps: int = 100


@dataclass
class MetricsConfig:
    extractor: str = "identity"
    dim: int = 64
    bandwidth: Any = "median"


@dataclass
class SampleConfig:
    mode: str = "generate"
    n_per_condition: int = 200
    use_ema: bool = True
    checkpoint: str = ""
    reference: str = ""


@dataclass
class AdaptorConfig:
    hidden: int = 64
    n_hidden: int = 1
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 256
    val_fraction: float = 0.25  # seen ids held back for early stopping
    eval_every: int = 50
    val_batch: int = 1024
    init_null: bool = True  # start at the base model's null perturbation token


@dataclass
class BoundConfig:
    instances: int = 100
    max_dim: int = 6
    n_samples: int = 0  # > 0 adds the sample-based estimate with bootstrap slack
    delta_scale: float = 1.0
    base_scale: float = 0.5


@dataclass
class AblationConfig:
    configs: list[str] = field(default_factory=lambda: ["A", "B", "C", "D", "E"])
    checkpoint_dir: str = ""
    train_inline: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    interpolant: InterpolantConfig = field(default_factory=InterpolantConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, batch=128, steps=2000))
    solver: SolverConfig = field(default_factory=SolverConfig)
    guidance: list[float] = field(default_factory=lambda: [1.0])
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Identity of the experiment; the output directory is not part of it."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        keys = [f"{path}.{k}" if path else k for k in unknown]
        raise ConfigError(f"unknown config keys: {', '.join(keys)}", keys)
    kwargs = {}
    for name, value in raw.items():
        f = fields[name]
        sub = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {path or 'config'}: {err}", [path]) from err


def from_dict(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    # nested defaults that were not given explicitly keep their factories
    return cfg


def load(path: str | Path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return from_dict(raw)
