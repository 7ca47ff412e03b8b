"""Displacement errors, oracle minima and the diversity/confidence metrics.

``m1`` is the equal-weight expectation of the mode errors with the selected
mode's share removed; ``m2`` is the probability-weighted expectation with
the most probable mode's weighted error removed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

RULES = ("p_max", "mean", "oracle")
DUMP_HEADER = ["scene_id", "agent_id", "mode", "prob", "t", "x", "y"]


class DumpError(ValueError):
    pass


def ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-step Euclidean distance; both arrays are [T_out, 2]."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.sqrt((d ** 2).sum(axis=-1)).mean())


def fde(pred: np.ndarray, gt: np.ndarray) -> float:
    d = np.asarray(pred, dtype=np.float64)[-1] - np.asarray(gt, dtype=np.float64)[-1]
    return float(np.sqrt((d ** 2).sum()))


@dataclass
class ModeErrors:
    ade: np.ndarray
    fde: np.ndarray
    probs: Optional[np.ndarray] = None
    mean_ade: Optional[float] = None
    mean_fde: Optional[float] = None

    @classmethod
    def from_trajectories(cls, modes_abs: np.ndarray, gt: np.ndarray,
                          probs: Optional[np.ndarray] = None) -> "ModeErrors":
        """``modes_abs`` [M, T_out, 2] against ``gt`` [T_out, 2]."""
        d = np.asarray(modes_abs, dtype=np.float64) - np.asarray(gt, dtype=np.float64)[None]
        dist = np.sqrt((d ** 2).sum(axis=-1))
        return cls(dist.mean(axis=1), dist[:, -1].copy(), None if probs is None else np.asarray(probs, dtype=np.float64))

    @property
    def modes(self) -> int:
        return len(self.ade)


def min_metrics(errors: ModeErrors) -> Tuple[float, float]:
    return float(np.min(errors.ade)), float(np.min(errors.fde))


def m1(errors: Sequence[float], e_hat: float) -> float:
    e = np.asarray(errors, dtype=np.float64)
    return float((e.sum() - e_hat) / e.size)


def m2(errors: Sequence[float], probs: Optional[Sequence[float]]) -> float:
    if probs is None:
        raise ValueError("M2 needs per-mode probabilities")
    e = np.asarray(errors, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != e.shape:
        raise ValueError(f"probs shape {p.shape} does not match errors shape {e.shape}")
    top = int(np.argmax(p))
    return float((p * e).sum() - p[top] * e[top])


def select_best_mode(errors: ModeErrors, rule: str, metric: str = "ade") -> Tuple[int, float]:
    """(index, error) of the reference mode under ``rule``.

    ``mean`` has no index of its own: it returns -1 with the caller-supplied
    error of the distribution mean.
    """
    e = errors.ade if metric == "ade" else errors.fde
    if rule == "p_max":
        if errors.probs is None:
            raise ValueError("rule 'p_max' needs per-mode probabilities")
        idx = int(np.argmax(errors.probs))
        return idx, float(e[idx])
    if rule == "oracle":
        idx = int(np.argmin(e))
        return idx, float(e[idx])
    if rule == "mean":
        val = errors.mean_ade if metric == "ade" else errors.mean_fde
        if val is None:
            raise ValueError("rule 'mean' needs the error of the mean prediction")
        return -1, float(val)
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")


@dataclass
class MetricsReport:
    ade: float
    fde: float
    ade_min: float
    fde_min: float
    m1_ade: float
    m1_fde: float
    m2_ade: float
    m2_fde: float
    n_agents: int
    best_mode_rule: str

    def as_dict(self) -> Dict[str, Union[float, int, str]]:
        return asdict(self)

    def to_csv(self) -> str:
        names = [f.name for f in fields(self)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(self, n) for n in names)])
        return buf.getvalue()

    def table(self) -> str:
        rows = [
            ("rule", self.best_mode_rule),
            ("agents", str(self.n_agents)),
            ("ADE / FDE", f"{self.ade:.4f} / {self.fde:.4f}"),
            ("ADE_min / FDE_min", f"{self.ade_min:.4f} / {self.fde_min:.4f}"),
            ("M1 (ADE / FDE)", f"{self.m1_ade:.4f} / {self.m1_fde:.4f}"),
            ("M2 (ADE / FDE)", f"{self.m2_ade:.4f} / {self.m2_fde:.4f}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def agent_metrics(errors: ModeErrors, rule: str) -> Dict[str, float]:
    """All per-agent quantities under one selection rule."""
    _, e_ade = select_best_mode(errors, rule, "ade")
    _, e_fde = select_best_mode(errors, rule, "fde")
    ade_min, fde_min = min_metrics(errors)
    has_p = errors.probs is not None
    return {
        "ade": e_ade,
        "fde": e_fde,
        "ade_min": ade_min,
        "fde_min": fde_min,
        "m1_ade": m1(errors.ade, e_ade),
        "m1_fde": m1(errors.fde, e_fde),
        "m2_ade": m2(errors.ade, errors.probs) if has_p else float("nan"),
        "m2_fde": m2(errors.fde, errors.probs) if has_p else float("nan"),
    }


def aggregate(per_agent: Iterable[Dict[str, float]], rule: str) -> MetricsReport:
    rows = list(per_agent)
    if not rows:
        raise ValueError("no agents to evaluate")
    keys = ["ade", "fde", "ade_min", "fde_min", "m1_ade", "m1_fde", "m2_ade", "m2_fde"]
    # sorted summation keeps the result independent of agent order
    means = {k: float(np.sum(np.sort([r[k] for r in rows]))) / len(rows) for k in keys}
    return MetricsReport(n_agents=len(rows), best_mode_rule=rule, **means)


# -- prediction dumps ------------------------------------------------------
@dataclass
class AgentPrediction:
    """Absolute future positions [M, T_out, 2] and mode probabilities [M]."""

    positions: np.ndarray
    probs: np.ndarray


Dump = Dict[Tuple[int, int], AgentPrediction]


def dump_rows(scene_id: int, agent_ids: Sequence[int], positions: np.ndarray,
              probs: np.ndarray) -> List[list]:
    """CSV rows for one scene; ``positions`` [M, T_out, 2, K], ``probs`` [M, K]."""
    M, T, _, K = positions.shape
    rows = []
    for k, aid in enumerate(agent_ids):
        for m in range(M):
            p = float(probs[m, k])
            for t in range(T):
                rows.append([scene_id, aid, m + 1, p, t + 1, float(positions[m, t, 0, k]), float(positions[m, t, 1, k])])
    return rows


def write_dump(rows: Iterable[list], path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUMP_HEADER)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    finally:
        if own:
            fh.close()


def read_dump(path_or_buf) -> Dump:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, encoding="utf-8", newline="") if own else path_or_buf
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DUMP_HEADER:
            raise DumpError(f"bad header {header}; expected {','.join(DUMP_HEADER)}")
        raw: Dict[Tuple[int, int], Dict[int, Dict[int, Tuple[float, float, float]]]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sid, aid, mode, t = int(row[0]), int(row[1]), int(row[2]), int(row[4])
                prob, x, y = float(row[3]), float(row[5]), float(row[6])
            except (ValueError, IndexError):
                raise DumpError(f"line {line_no}: malformed row {row}") from None
            raw.setdefault((sid, aid), {}).setdefault(mode, {})[t] = (prob, x, y)
    finally:
        if own:
            fh.close()
    dump: Dump = {}
    for key, modes in raw.items():
        mode_ids = sorted(modes)
        if mode_ids != list(range(1, len(mode_ids) + 1)):
            raise DumpError(f"scene {key[0]} agent {key[1]}: modes {mode_ids} are not 1..M")
        steps = sorted(modes[mode_ids[0]])
        if steps != list(range(1, len(steps) + 1)):
            raise DumpError(f"scene {key[0]} agent {key[1]}: time steps are not 1..T")
        pos = np.empty((len(mode_ids), len(steps), 2))
        probs = np.empty(len(mode_ids))
        for i, m in enumerate(mode_ids):
            if sorted(modes[m]) != steps:
                raise DumpError(f"scene {key[0]} agent {key[1]} mode {m}: inconsistent time steps")
            probs[i] = modes[m][1][0]
            for j, t in enumerate(steps):
                _, pos[i, j, 0], pos[i, j, 1] = modes[m][t]
        dump[key] = AgentPrediction(pos, probs)
    return dump


def evaluate_dataset(predictions: Dump, scenes, rule: str = "p_max") -> MetricsReport:
    """Average per-agent metrics over every agent of every scene."""
    rows = []
    n_modes = None
    for scene in scenes:
        gt_all = scene.future  # [K, T_out, 2]
        for k, aid in enumerate(scene.agent_ids):
            pred = predictions.get((scene.scene_id, aid))
            if pred is None:
                raise DumpError(f"missing prediction for scene {scene.scene_id}, agent {aid}")
            if n_modes is None:
                n_modes = pred.positions.shape[0]
            elif pred.positions.shape[0] != n_modes:
                raise DumpError(f"scene {scene.scene_id} agent {aid}: {pred.positions.shape[0]} modes, expected {n_modes}")
            if pred.positions.shape[1] != gt_all.shape[1]:
                raise DumpError(f"scene {scene.scene_id} agent {aid}: horizon {pred.positions.shape[1]} != {gt_all.shape[1]}")
            errs = ModeErrors.from_trajectories(pred.positions, gt_all[k], pred.probs)
            rows.append(agent_metrics(errs, rule))
    return aggregate(rows, rule)
