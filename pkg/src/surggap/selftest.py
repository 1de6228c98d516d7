"""Quick internal consistency checks behind ``surggap selftest``."""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from . import nn
from .ot import PointCloud, emd_exact, emd_sinkhorn, ground_cost


def _perm_oracle(C: np.ndarray) -> float:
    n = C.shape[0]
    return min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n))) / n


def run_selftest(emit: Callable[[str], None] = print, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(30):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        a = PointCloud.uniform(rng.normal(size=(n, d)))
        b = PointCloud.uniform(rng.normal(size=(n, d)))
        worst = max(worst, abs(emd_exact(a, b).cost - _perm_oracle(ground_cost(a, b))))
    results.append(("emd_exact vs permutation oracle", worst, worst <= 1e-9))

    a = PointCloud.uniform(rng.normal(size=(16, 3)))
    b = PointCloud.uniform(rng.normal(size=(16, 3)) + 0.5)
    exact = emd_exact(a, b).cost
    sk = emd_sinkhorn(a, b, 1e-3 * ground_cost(a, b).mean()).plan.cost
    rel = abs(sk - exact) / exact
    results.append(("sinkhorn within 2% of exact", rel, rel <= 0.02))

    worst = 0.0
    for s in range(5):
        r = np.random.default_rng(s)
        lin = nn.init_linear(5, 2, r)
        worst = max(worst, nn.grad_check(lin, r.normal(size=5), s % 2))
        tcn = nn.init_tcn(4, channels=4, rng=r)
        worst = max(worst, nn.grad_check(tcn, r.normal(size=(5, 4)), s % 2))
    results.append(("gradient check (linear, tcn)", worst, worst <= 1e-4))

    state = nn.OptimizerState(lr=1e-3, weight_decay=0.01)
    w = {"w": np.array([1.0])}
    nn.adamw_step(state, w, {"w": np.array([0.5])})
    expected = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8) + 0.01)
    err = abs(w["w"][0] - expected)
    results.append(("adamw first step", err, err <= 1e-15))

    ok = True
    for name, value, passed in results:
        emit(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3g}")
        ok = ok and passed
    return ok
