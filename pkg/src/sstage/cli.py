"""Command line: train, eval, predict, sweep, gradcheck.

Exit codes: 0 success, 1 user or data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import data as data_mod
from .data import DATASETS, DatasetError, ParseError
from .metrics import DumpError, dump_rows, evaluate_dataset, read_dump, write_dump
from .model import STAGE, CheckpointError, load_checkpoint, to_absolute
from .plot import write_svg
from .trainer import (ConfigError, TrainConfig, load_config, model_sweep_rows, parse_modes,
                      predict_absolute, sweep_csv, sweep_rows, train)

log = logging.getLogger("sstage")


class UserError(Exception):
    """Bad input from the user: reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(f"{self.prog}: {message}")


def _config(args, **overrides) -> TrainConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**overrides)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_model(path: str, cfg: TrainConfig) -> STAGE:
    try:
        return load_checkpoint(path, cfg.dropout_rate)
    except OSError as exc:
        raise UserError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except CheckpointError as exc:
        raise UserError(f"{path}: {exc}") from None


def _load_test(cfg: TrainConfig, test_set: str):
    root = Path(cfg.dataset_root)
    if not root.is_dir():
        raise UserError(f"dataset root not found: {root}")
    scenes = data_mod.load_set(root, test_set)
    if not scenes:
        raise UserError(f"no complete scenes in {root / test_set}")
    return scenes


# -- commands --------------------------------------------------------------
def cmd_train(args) -> int:
    try:
        modes = parse_modes(args.modes) if args.modes else None
    except ValueError:
        raise UserError(f"--modes: expected a list like 1,2,5 or a range like 1-20, got {args.modes!r}") from None
    cfg = _config(args, test_set=args.test_set, modes=modes, dataset_root=args.dataset_root, epochs=args.epochs)
    root = Path(cfg.dataset_root)
    if not root.is_dir():
        raise UserError(f"dataset root not found: {root}")
    split = data_mod.make_split(cfg.test_set, cfg.val_fraction)
    scenes = data_mod.load_split(root, split, include_test=False)
    if not scenes.train:
        raise UserError(f"no training scenes under {root} for sets {', '.join(split.train_sets)}")
    results = train(cfg, scenes.train, scenes.val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m, res in sorted(results.items()):
        (out / f"model_M{m}.sstg").write_bytes(res.checkpoint)
        _write(out / f"train_log_M{m}.csv", res.log.to_csv())
        _write(out / f"timings_M{m}.csv", res.log.timings_csv())
    failed = sorted(set(cfg.modes) - set(results))
    if results:
        rows = sweep_rows(results, scenes.val or scenes.train)
        _write(out / "sweep.csv", sweep_csv(rows))
        best = next(r for r in rows if r.best)
        print(f"trained M={','.join(map(str, sorted(results)))}; best M={best.modes} "
              f"(validation ADE_min {best.ade_min:.4f}); artifacts in {out}")
    if failed:
        print(f"training diverged for M={','.join(map(str, failed))}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args, dataset_root=args.dataset_root)
    test_set = args.test_set or cfg.test_set
    model = _load_model(args.checkpoint, cfg)
    scenes = _load_test(cfg, test_set)
    rows: List[list] = []
    for scene in scenes:
        pos, probs = predict_absolute(model, scene)
        rows.extend(dump_rows(scene.scene_id, scene.agent_ids, pos, probs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_path = out / "predictions.csv"
    write_dump(rows, dump_path)
    # metrics are computed from the dump as written, so re-evaluating it reproduces them
    dump = read_dump(dump_path)
    rules = [args.rule] + [r for r in ("p_max", "oracle") if r != args.rule]
    for rule in rules:
        rep = evaluate_dataset(dump, scenes, rule)
        _write(out / f"metrics_{rule}.csv", rep.to_csv())
        print(f"[{test_set}] {rule}")
        print(rep.table())
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = _load_model(args.checkpoint, cfg)
    try:
        records = data_mod.read_annotations(args.scene_file)
    except OSError as exc:
        raise UserError(f"cannot read scene file {args.scene_file}: {exc.strerror}") from None
    scene = data_mod.scene_from_records(records, t_in=model.cfg.t_in, t_out=0)
    pred = model.predict(scene)
    pos = to_absolute(pred.displacements, scene)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dump(dump_rows(scene.scene_id, scene.agent_ids, pos, pred.probs), out)
    if args.plot:
        Path(args.plot).parent.mkdir(parents=True, exist_ok=True)
        write_svg(args.plot, scene.observed, pos, pred.probs, scene.agent_ids)
    print(f"{scene.num_agents} agents x {pred.modes} modes x {pos.shape[1]} steps -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, dataset_root=args.dataset_root)
    test_set = args.test_set or cfg.test_set
    paths = list(args.checkpoint or [])
    if args.checkpoint_dir:
        folder = Path(args.checkpoint_dir)
        if not folder.is_dir():
            raise UserError(f"checkpoint directory not found: {folder}")
        paths.extend(str(p) for p in sorted(folder.glob("*.sstg")))
    if not paths:
        raise UserError("sweep needs at least one checkpoint (--checkpoint or --checkpoint-dir)")
    models: Dict[int, STAGE] = {}
    for p in paths:
        model = _load_model(p, cfg)
        if model.cfg.modes in models:
            raise UserError(f"{p}: a checkpoint with M={model.cfg.modes} was already given")
        models[model.cfg.modes] = model
    rows = model_sweep_rows(models, _load_test(cfg, test_set))
    text = sweep_csv(rows)
    if args.out:
        _write(Path(args.out), text)
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    seed = args.seed if args.seed is not None else _config(args).seed
    ok = True
    for dtype in (np.float32, np.float64):
        rep = run_suite(dtype, seed=seed, max_entries=None if args.full else args.entries)
        log.info("%s gradient suite: %.1fs", rep.dtype, rep.elapsed)
        for line in (rep.lines() if args.verbose else [l for l in rep.lines() if l.startswith("FAIL")]):
            print(line)
        status = "passed" if rep.passed else f"FAILED ({len(rep.failures())} checks)"
        print(f"[{rep.dtype}] {len(rep.results)} checks, max rel error {rep.max_rel_error:.3e}: {status}")
        ok &= rep.passed
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sstage", description="Multi-modal pedestrian trajectory forecasting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true", help="more logging")

    p = sub.add_parser("train", help="train one model per mode count")
    common(p)
    p.add_argument("--test-set", choices=DATASETS, help="held-out dataset")
    p.add_argument("--modes", help="mode counts, e.g. 1,2,5 or 1-20")
    p.add_argument("--dataset-root", help="directory holding one folder per dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-set", choices=DATASETS)
    p.add_argument("--rule", choices=("p_max", "oracle"), default="p_max")
    p.add_argument("--dataset-root")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast one scene file")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-file", required=True, help="annotation file; the last T_in frames are used")
    p.add_argument("--out", required=True, help="prediction CSV")
    p.add_argument("--plot", help="optional SVG output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="compare checkpoints with different mode counts")
    common(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint file (repeatable)")
    p.add_argument("--checkpoint-dir", help="directory of *.sstg checkpoints")
    p.add_argument("--test-set", choices=DATASETS)
    p.add_argument("--dataset-root")
    p.add_argument("--out", help="sweep CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--entries", type=int, default=64, help="entries sampled per large parameter")
    p.add_argument("--full", action="store_true", help="check every parameter entry")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UserError, ConfigError, DatasetError, ParseError, DumpError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
