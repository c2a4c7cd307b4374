import numpy as np
import pytest

from flowscreen import experiments as X
from flowscreen import tensor as T
from flowscreen.models import MiT, MiTConfig, MLPVelocity
from flowscreen.tensor import Tensor

ACCEPTANCE: list[str] = []  # verdict lines from test_acceptance.py


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


# scalar test functions exercising each differentiable op
OPS = {
    "add": lambda x: T.sum_all(T.add(x, T.square(x))),
    "sub": lambda x: T.sum_all(T.square(T.sub(x, 0.3))),
    "mul": lambda x: T.sum_all(T.mul(x, T.gelu(x))),
    "scale": lambda x: T.sum_all(T.square(T.scale(x, -1.7))),
    "gelu": lambda x: T.sum_all(T.gelu(x)),
    "silu": lambda x: T.sum_all(T.silu(x)),
    "softmax": lambda x: T.sum_all(T.mul(T.softmax_lastdim(x), Tensor(np.arange(x.shape[-1]) + 1.0))),
    "rmsnorm": lambda x: T.sum_all(T.mul(T.rmsnorm(x), Tensor(np.linspace(-1, 2, x.shape[-1])))),
    "layernorm": lambda x: T.sum_all(T.mul(T.layernorm(x), Tensor(np.linspace(-1, 2, x.shape[-1])))),
    "transpose": lambda x: T.sum_all(T.mul(T.transpose(x, (1, 0)), Tensor(np.arange(x.data.size).reshape(x.shape[::-1])))),
    "reshape": lambda x: T.sum_all(T.square(T.reshape(x, (-1,)))),
    "getitem": lambda x: T.sum_all(T.square(T.getitem(x, (slice(None), [0, 0, 1])))),
    "concat": lambda x: T.sum_all(T.square(T.concat_lastdim([x, T.gelu(x)]))),
    "take_rows": lambda x: T.sum_all(T.square(T.take_rows(x, np.array([1, 0, 1])))),
    "mean": lambda x: T.square(T.mean_all(x)),
    "mean_lastdim": lambda x: T.sum_all(T.square(T.mean_lastdim(x))),
    "mse": lambda x: T.mse(T.gelu(x), Tensor(np.ones(x.shape))),
    "matmul": lambda x: T.sum_all(T.square(T.matmul(x, T.transpose(x, (1, 0))))),
}


def randomize(model, seed=0):
    """Give every parameter a generic random value.

    Zero-initialised output layers and unit gains make many gradients
    exactly zero, which hides errors from a finite-difference check.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".w") and p.ndim == 2:
            p.data = rng.standard_normal(p.shape) / np.sqrt(p.shape[0])
        elif "norm" in name:
            p.data = 1.0 + 0.1 * rng.standard_normal(p.shape)
        else:
            p.data = 0.1 * rng.standard_normal(p.shape)
    return model


def direct_ema(trace, gamma):
    """Sample s gets the mass of the density (g+1) u^g on [s-1, s], scaled by t^-(g+1)."""
    out = []
    for t in range(1, len(trace) + 1):
        s = np.arange(1, t + 1, dtype=np.float64)
        w = (s / t) ** (gamma + 1) - ((s - 1) / t) ** (gamma + 1)
        out.append(float(np.dot(w, trace[:t])))
    return np.array(out)


@pytest.fixture
def tiny_mlp():
    return randomize(MLPVelocity(3, 4, 2, hidden=8, layers=2, cond_dim=4, time_dim=4, seed=1), seed=1)


@pytest.fixture
def tiny_mit():
    cfg = MiTConfig(depth=2, heads=2, hidden=8, patch=2, proj_dropout=0.0, time_dim=4, mlp_ratio=2)
    return randomize(MiT(2, 4, 3, 2, cfg, seed=2), seed=2)


@pytest.fixture(scope="session")
def two_gaussian_run():
    """MLP trained 2k steps on the control vs (3, 3) toy; shared by sampling and acceptance tests."""
    return X.train_run(X.two_gaussian_config(seed=0, steps=2000))


@pytest.fixture(scope="session")
def screen_runs():
    """Configs A, B and D of the ablation matrix trained on the default screen."""
    from flowscreen.config import RunConfig

    base = RunConfig()
    return {label: X.train_run(X.ablation_config(base, label)) for label in ("A", "B", "D")}
