"""Static SVG rendering of observed tracks and predicted modes."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


def _points(xy: np.ndarray) -> str:
    return " ".join(f"{x:.3f},{y:.3f}" for x, y in xy)


def render_svg(observed: np.ndarray, predicted: np.ndarray, probs: np.ndarray,
               agent_ids: Sequence[int], size: int = 600, margin: float = 20.0) -> str:
    """One solid polyline per observed track, one dashed polyline per mode.

    ``observed`` is [K, T_in, 2], ``predicted`` [M, T_out, 2, K] (absolute),
    ``probs`` [M, K]. Mode opacity equals its probability. Predicted tracks
    start at the last observed position so the two connect.
    """
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    K = observed.shape[0]
    M = predicted.shape[0]
    tracks = [observed[k] for k in range(K)]
    modes = [[np.vstack([observed[k, -1:], predicted[m, :, :, k]]) for m in range(M)] for k in range(K)]
    allpts = np.vstack(tracks + [t for per in modes for t in per])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = float(max((hi - lo).max(), 1e-9))
    scale = (size - 2 * margin) / span

    def to_px(xy: np.ndarray) -> np.ndarray:
        px = (xy - lo) * scale + margin
        px[:, 1] = size - px[:, 1]  # y axis points up in world coordinates
        return px

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for k in range(K):
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<g id="agent-{agent_ids[k]}">')
        out.append(f'<polyline points="{_points(to_px(tracks[k]))}" fill="none" stroke="{color}" '
                   f'stroke-width="2"/>')
        for m in range(M):
            p = float(np.clip(probs[m, k], 0.0, 1.0))
            out.append(f'<polyline points="{_points(to_px(modes[k][m]))}" fill="none" stroke="{color}" '
                       f'stroke-width="2" stroke-dasharray="6,4" stroke-opacity="{p:.4f}">'
                       f'<title>agent {agent_ids[k]} mode {m + 1} p={p:.4f}</title></polyline>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: Union[str, Path], *args, **kwargs) -> None:
    Path(path).write_text(render_svg(*args, **kwargs), encoding="utf-8")
