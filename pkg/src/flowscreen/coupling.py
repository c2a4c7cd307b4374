"""Source/target pairing for flow-matching minibatches."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

MAX_OT_BATCH = 4096


class DataError(KeyError):
    pass


class FlowKind(str, Enum):
    NOISE_TO_DATA = "noise_to_data"
    CONTROL_TO_PERTURBED = "control_to_perturbed"


@dataclass(frozen=True)
class FlowConstruction:
    kind: FlowKind = FlowKind.NOISE_TO_DATA
    noise_aug_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", FlowKind(self.kind))
        if not 0.0 <= self.noise_aug_prob <= 1.0:
            raise ValueError("noise_aug_prob must be in [0, 1]")


@dataclass
class CouplingPlan:
    permutation: np.ndarray  # source index i is paired with target permutation[i]
    cost: float


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect assignment on a square cost matrix.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^3).  Returns ``col_of_row``.  Among equal-cost candidates the
    lowest column index wins.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 1-based, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.nonzero(used)[0]
            u[row_of_col[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def sq_cost_matrix(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    a = x0.reshape(len(x0), -1)
    b = x1.reshape(len(x1), -1)
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def pair_ot(x0: np.ndarray, x1: np.ndarray) -> CouplingPlan:
    if len(x0) != len(x1):
        raise ValueError(f"OT coupling needs equal batch sizes, got {len(x0)} and {len(x1)}")
    if len(x0) > MAX_OT_BATCH:
        raise ValueError(f"batch of {len(x0)} exceeds the exact-OT limit {MAX_OT_BATCH}")
    c = sq_cost_matrix(np.asarray(x0), np.asarray(x1))
    perm = hungarian(c)
    return CouplingPlan(perm, float(c[np.arange(len(perm)), perm].sum()))


def pair_independent(x1: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal(np.shape(x1)), x1


def apply_ot(x0: np.ndarray, x1: np.ndarray, *aligned) -> tuple:
    """Reorder the target side (and anything aligned with it) to the OT pairing."""
    plan = pair_ot(x0, x1)
    p = plan.permutation
    return (x0, x1[p]) + tuple(a[p] for a in aligned)


def apply_ot_grouped(x0: np.ndarray, x1: np.ndarray, groups: np.ndarray, *aligned) -> tuple:
    """OT pairing solved separately inside each group of equal condition labels.

    Sources stay in place, so x0 given any condition is still an i.i.d.
    Gaussian draw; a single pooled assignment would hand each condition only
    the noise region nearest its targets.
    """
    groups = np.asarray(groups)
    order = np.arange(len(x1))
    for g in np.unique(groups, axis=0):
        idx = np.nonzero(np.all(groups.reshape(len(groups), -1) == np.reshape(g, (1, -1)), axis=1))[0]
        if len(idx) > 1:
            order[idx] = idx[pair_ot(x0[idx], x1[idx]).permutation]
    return (x0, x1[order]) + tuple(a[order] for a in aligned)


def pair_control(x1: np.ndarray, context_ids: np.ndarray, control_pool: dict[int, np.ndarray],
                 rng: np.random.Generator, noise_aug_prob: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Pair every target with a random control from the same context, with replacement."""
    context_ids = np.asarray(context_ids)
    missing = sorted({int(c) for c in np.unique(context_ids)
                      if int(c) not in control_pool or len(control_pool[int(c)]) == 0})
    if missing:
        raise DataError(f"control pool has no samples for context ids {missing}")
    x0 = np.empty_like(np.asarray(x1, dtype=np.float64))
    for i, c in enumerate(context_ids):
        pool = control_pool[int(c)]
        x0[i] = pool[rng.integers(len(pool))]
    if noise_aug_prob > 0:
        aug = rng.random(len(x0)) < noise_aug_prob
        noise = rng.standard_normal(x0.shape)
        x0[aug] += noise[aug]
    return x0, x1
