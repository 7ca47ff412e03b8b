"""Winner-takes-all regression plus cross-entropy mode ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, l2_norm, log, mul, sub, tensor_sum
from .autodiff.tensor import add
from .data import Scene
from .model import ForwardOutput, to_absolute

LOG_CLAMP = 1e-12
NORM_POLICIES = ("stacked", "per_step")


@dataclass
class LossBreakdown:
    total: Tensor
    l_reg_min: float
    l_ce: float
    m_min: np.ndarray  # [K]

    @property
    def value(self) -> float:
        return self.total.item()


def _gt_future(scene_or_gt) -> np.ndarray:
    """Ground-truth future as [T_out, 2, K]."""
    if isinstance(scene_or_gt, Scene):
        return np.ascontiguousarray(scene_or_gt.future.transpose(1, 2, 0))
    return np.asarray(scene_or_gt, dtype=np.float64)


def mode_errors(pred_abs: np.ndarray, gt: np.ndarray, policy: str = "stacked") -> np.ndarray:
    """Per-mode, per-agent regression error [M, K].

    ``stacked`` is the norm of the whole (T_out x 2) residual; ``per_step``
    sums the per-step Euclidean distances.
    """
    res = np.asarray(pred_abs, dtype=np.float64) - np.asarray(gt, dtype=np.float64)[None]
    if policy == "stacked":
        return np.sqrt((res ** 2).sum(axis=(1, 2)))
    if policy == "per_step":
        return np.sqrt((res ** 2).sum(axis=2)).sum(axis=1)
    raise ValueError(f"unknown norm policy {policy!r}; expected one of {NORM_POLICIES}")


def min_error_mode(pred_abs: np.ndarray, gt: np.ndarray, policy: str = "stacked") -> np.ndarray:
    """Index of the closest mode per agent; ties go to the lowest index."""
    return np.argmin(mode_errors(pred_abs, gt, policy), axis=0)


def reg_loss_min(pred_abs: np.ndarray, gt: np.ndarray, policy: str = "stacked") -> float:
    err = mode_errors(pred_abs, gt, policy)
    return float(err.min(axis=0).sum())


def ce_loss(probs: np.ndarray, m_min: np.ndarray) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    picked = probs[np.asarray(m_min), np.arange(probs.shape[1])]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).sum())


def _selected_norms(residual: Tensor, policy: str) -> Tensor:
    """Differentiable [M, K] errors matching ``mode_errors``."""
    M, T, C, K = residual.shape
    if policy == "stacked":
        flat = residual.permute(0, 3, 1, 2).reshape(M, K, T * C)
        return l2_norm(flat, axis=2)
    steps = l2_norm(residual, axis=2)  # [M, T, K]
    return tensor_sum(steps, axis=1)


def total_loss(out: ForwardOutput, scene: Scene, policy: str = "stacked") -> LossBreakdown:
    """Differentiable L = L_ce + L_reg_min for one scene.

    The closest-mode index is computed from values and held constant, so
    only the selected mode of each agent receives regression gradient.
    """
    disp = out.displacements
    pred_abs = to_absolute(disp, scene)  # [M, T, 2, K]
    gt = _gt_future(scene)
    residual = sub(pred_abs, Tensor(gt[None], dtype=disp.dtype))
    errors = _selected_norms(residual, policy)  # [M, K]
    M, K = errors.shape
    m_min = np.argmin(errors.values.astype(np.float64), axis=0)
    onehot = np.zeros((M, K), dtype=disp.dtype)
    onehot[m_min, np.arange(K)] = 1
    mask = Tensor(onehot)
    reg = tensor_sum(mul(errors, mask))
    ce = mul(tensor_sum(mul(log(out.probs, LOG_CLAMP), mask)), -1.0)
    total = add(reg, ce)
    return LossBreakdown(total, reg.item(), ce.item(), m_min)
