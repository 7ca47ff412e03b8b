"""Per-step interaction graphs over observed relative motions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Scene

# Pairs whose relative motions are closer than this get no edge.
COINCIDENT_TOL = 1e-6


@dataclass
class GraphSequence:
    V: np.ndarray  # [2, T_in, K] relative motions
    A: np.ndarray  # [T_in, K, K] normalized adjacency

    @property
    def num_agents(self) -> int:
        return self.V.shape[2]


def relative_motion(scene: Scene) -> np.ndarray:
    """[2, T_in, K] per-step displacements; the first step is zero."""
    obs = scene.observed  # [K, T_in, 2]
    vel = np.zeros_like(obs)
    vel[:, 1:] = obs[:, 1:] - obs[:, :-1]
    return np.ascontiguousarray(vel.transpose(2, 1, 0))


def raw_adjacency(v_t: np.ndarray) -> np.ndarray:
    """Inverse-distance kernel between node attributes plus self-connections.

    ``v_t`` is [2, K]. Off-diagonal entries are 1/||v_i - v_j||, or 0 when the
    two motions coincide; the diagonal is 1.
    """
    diff = v_t[:, :, None] - v_t[:, None, :]
    dist = np.sqrt((diff ** 2).sum(axis=0))
    with np.errstate(divide="ignore"):
        kernel = np.where(dist < COINCIDENT_TOL, 0.0, 1.0 / np.where(dist < COINCIDENT_TOL, 1.0, dist))
    np.fill_diagonal(kernel, 0.0)
    return kernel + np.eye(v_t.shape[1])


def normalize(a_hat: np.ndarray) -> np.ndarray:
    """D^-1/2 Â D^-1/2 with D the row sums of Â (self-connections included)."""
    d = a_hat.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return a_hat * inv[:, None] * inv[None, :]


def build(scene: Scene) -> GraphSequence:
    V = relative_motion(scene)
    A = np.stack([normalize(raw_adjacency(V[:, t, :])) for t in range(V.shape[1])])
    return GraphSequence(V, A)
