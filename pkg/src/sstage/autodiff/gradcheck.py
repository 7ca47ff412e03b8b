"""Finite-difference oracles for the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .tensor import Tensor, mul, tensor_sum

# Denominator floor for the relative error: entries whose analytic and
# numeric gradients are both below it are compared in absolute terms.
REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    worst_index: tuple = ()
    per_name: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float,
                     indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of a scalar function of ``x`` (``x`` is restored).

    ``indices`` restricts the differencing to those flat positions; the
    remaining entries of the result are left at zero.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * h)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4, tol: float = 1e-4,
               seed: int = 0, oracle_dtype=np.float64) -> GradCheckReport:
    """Compare the analytic gradient of ``f`` at ``x`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. The finite-difference side is evaluated in
    ``oracle_dtype`` (float64 by default) on a copy of ``x``.
    """
    probe = f(Tensor(x.values.copy()))
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    xa = Tensor(x.values.copy(), requires_grad=True)
    loss = tensor_sum(mul(f(xa), Tensor(weights.astype(xa.dtype))))
    loss.backward()

    def scalar(v: np.ndarray) -> float:
        out = f(Tensor(v, dtype=oracle_dtype))
        return float(np.sum(out.values.astype(np.float64) * weights))

    xo = x.values.astype(oracle_dtype).copy()
    numeric = numeric_gradient(scalar, xo, h)
    err = relative_error(xa.grad, numeric)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return GradCheckReport(float(err.max()) if err.size else 0.0, tol, tuple(int(i) for i in worst))


def sample_indices(size: int, max_entries: Optional[int], rng: np.random.Generator) -> np.ndarray:
    """All flat positions, or a sorted random subset of ``max_entries`` of them."""
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, max_entries, replace=False))


def check_parameters(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-4,
                     tol: float = 1e-4, oracle_fn: Optional[Callable[[], Tensor]] = None,
                     oracle_params: Optional[Mapping[str, Tensor]] = None,
                     max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Gradient check of a scalar loss with respect to named parameters.

    ``oracle_fn``/``oracle_params`` optionally supply a higher-precision copy
    of the same computation for the finite differences; by default the loss
    itself is differenced. ``max_entries`` caps the number of entries checked
    per parameter (a seeded random subset for larger tensors).
    """
    rng = np.random.default_rng(seed)
    oracle_fn = oracle_fn or loss_fn
    oracle_params = oracle_params or params
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()

    per_name: Dict[str, float] = {}
    worst_val, worst_idx = 0.0, ()
    for name, p in params.items():
        target = oracle_params[name]

        def scalar(_v, _fn=oracle_fn) -> float:
            return float(_fn().values.astype(np.float64).reshape(-1)[0])

        idx = sample_indices(p.size, max_entries, rng)
        numeric = numeric_gradient(scalar, target.values, h, idx)
        err = relative_error(p.grad.reshape(-1)[idx], numeric.reshape(-1)[idx])
        per_name[name] = float(err.max())
        if per_name[name] >= worst_val:
            worst_val = per_name[name]
            worst_idx = (name,) + tuple(int(i) for i in np.unravel_index(int(idx[np.argmax(err)]), p.shape))
    return GradCheckReport(worst_val, tol, worst_idx, per_name)
