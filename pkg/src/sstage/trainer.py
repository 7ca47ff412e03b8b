"""Training loop, mode-count sweep and model selection."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .data import DATASETS, Scene
from .losses import total_loss
from .metrics import ModeErrors, agent_metrics, aggregate
from .model import STAGE, ModelConfig, PredictionSet, encode_checkpoint, to_absolute

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    modes: List[int] = field(default_factory=lambda: [2])
    seed: int = 0
    dataset_root: str = "datasets"
    test_set: str = "eth"
    optimizer: str = "adam"
    dropout_rate: float = 0.1
    val_fraction: float = 0.1
    accumulate: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.modes or any(m < 1 for m in self.modes):
            raise ConfigError("modes must be a non-empty list of values >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.test_set not in DATASETS:
            raise ConfigError(f"test_set must be one of {', '.join(DATASETS)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.accumulate < 1:
            raise ConfigError("accumulate must be >= 1")


def parse_modes(text: str) -> List[int]:
    """'1,2,5' or a range '1-20'."""
    out: List[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


_CASTS = {"learning_rate": float, "epochs": int, "seed": int, "dropout_rate": float,
          "val_fraction": float, "accumulate": int, "modes": parse_modes,
          "dataset_root": str, "test_set": str, "optimizer": str}


def load_config(path: Union[str, Path], **overrides) -> TrainConfig:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CASTS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        try:
            values[key] = _CASTS[key](val)
        except ValueError:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {val!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


# -- optimizers ------------------------------------------------------------
class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def step(self, scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad.astype(np.float64) * scale
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.values = (p.values.astype(np.float64) - update).astype(p.dtype)


class SGD:
    def __init__(self, params, lr=1e-4):
        self.params = list(params)
        self.lr = lr

    def step(self, scale: float = 1.0) -> None:
        for p in self.params:
            p.values = (p.values.astype(np.float64) - self.lr * scale * p.grad).astype(p.dtype)


# -- logs ------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_reg: float
    loss_ce: float
    val_ade_min: float
    val_fde_min: float


@dataclass
class TrainLog:
    modes: int
    epochs: List[EpochRecord] = field(default_factory=list)
    wall_times: List[float] = field(default_factory=list)
    best_epoch: int = -1
    aborted: Optional[str] = None

    def to_csv(self) -> str:
        """Deterministic columns only; wall times go to ``timings_csv``."""
        names = [f.name for f in fields(EpochRecord)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["modes"] + names + ["best"])
        for rec in self.epochs:
            vals = [getattr(rec, n) for n in names]
            w.writerow([self.modes] + [repr(v) if isinstance(v, float) else v for v in vals]
                       + [int(rec.epoch == self.best_epoch)])
        return buf.getvalue()

    def timings_csv(self) -> str:
        lines = ["epoch,wall_time_s"]
        lines += [f"{i + 1},{t:.6f}" for i, t in enumerate(self.wall_times)]
        return "\n".join(lines) + "\n"

    @property
    def best(self) -> Optional[EpochRecord]:
        for rec in self.epochs:
            if rec.epoch == self.best_epoch:
                return rec
        return None


@dataclass
class TrainResult:
    modes: int
    model: STAGE
    log: TrainLog
    checkpoint: bytes


def predict_absolute(model: STAGE, scene: Scene) -> tuple:
    """Eval-mode prediction; returns (positions [M, T_out, 2, K], probs [M, K])."""
    pred: PredictionSet = model.predict(scene)
    return to_absolute(pred.displacements, scene), pred.probs


def scene_errors(model: STAGE, scene: Scene) -> List[ModeErrors]:
    pos, probs = predict_absolute(model, scene)
    out = []
    for k in range(scene.num_agents):
        out.append(ModeErrors.from_trajectories(pos[:, :, :, k], scene.future[k], probs[:, k]))
    return out


def evaluate_scenes(model: STAGE, scenes: Sequence[Scene], rule: str = "p_max"):
    rows = [agent_metrics(e, rule) for s in scenes for e in scene_errors(model, s)]
    return aggregate(rows, rule)


def train_one(model: STAGE, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene],
              cfg: TrainConfig, seed: int) -> TrainResult:
    """Fit one model; keeps the parameters of the epoch with lowest validation ADE_min."""
    rng = np.random.default_rng(seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(params, cfg.learning_rate)
    tlog = TrainLog(model.cfg.modes)
    best_state, best_val = None, math.inf
    val_set = list(val_scenes) or list(train_scenes)
    order = np.arange(len(train_scenes))
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        rng.shuffle(order)
        sums = np.zeros(3)
        model.zero_grad()
        pending = 0
        for i in order:
            scene = train_scenes[i]
            out = model(scene, rng)
            lb = total_loss(out, scene)
            if not math.isfinite(lb.value):
                tlog.aborted = f"non-finite loss at epoch {epoch}, scene {scene.scene_id}"
                log.error("M=%d: %s", model.cfg.modes, tlog.aborted)
                raise DivergenceError(tlog.aborted)
            lb.total.backward()
            pending += 1
            if pending == cfg.accumulate:
                opt.step(1.0 / pending)
                model.zero_grad()
                pending = 0
            sums += (lb.value, lb.l_reg_min, lb.l_ce)
        if pending:
            opt.step(1.0 / pending)
            model.zero_grad()
        sums /= max(len(train_scenes), 1)
        rep = evaluate_scenes(model, val_set, "oracle")
        rec = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]), rep.ade_min, rep.fde_min)
        tlog.epochs.append(rec)
        tlog.wall_times.append(time.perf_counter() - t0)
        if rec.val_ade_min < best_val:
            best_val = rec.val_ade_min
            tlog.best_epoch = epoch
            best_state = model.state_dict()
        log.info("M=%d epoch %d loss %.4f val ADE_min %.4f", model.cfg.modes, epoch, rec.loss_total, rec.val_ade_min)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model.cfg.modes, model, tlog, encode_checkpoint(model.state_dict()))


def derived_seed(seed: int, modes: int) -> int:
    return int(np.random.SeedSequence([seed, modes]).generate_state(1)[0])


def train(cfg: TrainConfig, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene]) -> Dict[int, TrainResult]:
    """One fresh model per mode count in ``cfg.modes``."""
    if not train_scenes:
        raise ValueError("no training scenes")
    results = {}
    for m in cfg.modes:
        seed = derived_seed(cfg.seed, m)
        model = STAGE(ModelConfig(modes=m, dropout_rate=cfg.dropout_rate), seed=seed)
        try:
            results[m] = train_one(model, train_scenes, val_scenes, cfg, seed)
        except DivergenceError:
            continue
    return results


@dataclass
class SweepRow:
    modes: int
    ade_min: float
    fde_min: float
    ade_pmax: float
    fde_pmax: float
    m1_ade: float
    m2_ade: float
    best: bool = False


def sweep_report(rows: Sequence[SweepRow]) -> List[SweepRow]:
    """Flag the mode count with the lowest ADE_min (first one on ties)."""
    if not rows:
        raise ValueError("sweep report needs at least one entry")
    rows = sorted(rows, key=lambda r: r.modes)
    best = min(range(len(rows)), key=lambda i: (rows[i].ade_min, i))
    for i, r in enumerate(rows):
        r.best = i == best
    return rows


def sweep_rows(results: Dict[int, TrainResult], scenes: Sequence[Scene]) -> List[SweepRow]:
    return model_sweep_rows({m: res.model for m, res in results.items()}, scenes)


def model_sweep_rows(models: Dict[int, STAGE], scenes: Sequence[Scene]) -> List[SweepRow]:
    """Evaluate one model per mode count; p_max errors plus the oracle minima."""
    out = []
    for m, model in sorted(models.items()):
        rp = evaluate_scenes(model, scenes, "p_max")
        out.append(SweepRow(m, rp.ade_min, rp.fde_min, rp.ade, rp.fde, rp.m1_ade, rp.m2_ade))
    return sweep_report(out)


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["M", "ADE_min", "FDE_min", "ADE_pmax", "FDE_pmax", "M1", "M2", "best"])
    for r in rows:
        w.writerow([r.modes, repr(r.ade_min), repr(r.fde_min), repr(r.ade_pmax), repr(r.fde_pmax),
                    repr(r.m1_ade), repr(r.m2_ade), int(r.best)])
    return buf.getvalue()
