"""ETH/UCY-style annotation parsing, scene windowing and leave-one-out splits.

Annotation files hold one record per line, ``frame_id agent_id x y``,
separated by spaces or tabs. Ids may be written as floats (``10.0``) as long
as they are integral.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Union

import numpy as np

T_IN = 8
T_OUT = 12
DATASETS = ("eth", "hotel", "univ", "zara1", "zara2")


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class AnnotationRecord:
    frame_id: int
    agent_id: int
    x: float
    y: float


@dataclass
class Scene:
    """K agents fully observed over ``T_IN + T_OUT`` consecutive sampled frames.

    ``positions`` is [K, T_IN + T_OUT, 2] in the file's units (meters).
    """

    scene_id: int
    agent_ids: List[int]
    positions: np.ndarray
    source_set: str = ""
    frame_step: int = 1
    start_frame: int = 0
    t_in: int = T_IN
    t_out: int = T_OUT

    @property
    def num_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def observed(self) -> np.ndarray:
        return self.positions[:, : self.t_in]

    @property
    def future(self) -> np.ndarray:
        return self.positions[:, self.t_in:]

    def to_records(self) -> List[AnnotationRecord]:
        recs = []
        for t in range(self.positions.shape[1]):
            frame = self.start_frame + t * self.frame_step
            for k, aid in enumerate(self.agent_ids):
                recs.append(AnnotationRecord(frame, aid, float(self.positions[k, t, 0]), float(self.positions[k, t, 1])))
        return recs

    def to_text(self) -> str:
        return format_annotations(self.to_records())


def _as_int(token: str, line_no: int, what: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(line_no, f"{what} {token!r} is not a number") from None
    if not math.isfinite(value) or value != int(value):
        raise ParseError(line_no, f"{what} {token!r} is not an integer")
    return int(value)


def parse_annotations(stream: Union[TextIO, str, Iterable[str]]) -> List[AnnotationRecord]:
    """Parse annotation text; returns records sorted by (frame_id, agent_id)."""
    lines = stream.splitlines() if isinstance(stream, str) else stream
    records = []
    seen = set()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(line_no, f"expected 4 fields, found {len(parts)}")
        frame = _as_int(parts[0], line_no, "frame id")
        agent = _as_int(parts[1], line_no, "agent id")
        try:
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise ParseError(line_no, f"non-numeric coordinate in {line!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(line_no, "non-finite coordinate")
        if (frame, agent) in seen:
            raise ParseError(line_no, f"duplicate record for frame {frame}, agent {agent}")
        seen.add((frame, agent))
        records.append(AnnotationRecord(frame, agent, x, y))
    records.sort(key=lambda r: (r.frame_id, r.agent_id))
    return records


def format_annotations(records: Iterable[AnnotationRecord]) -> str:
    # repr() round-trips doubles exactly
    return "".join(f"{r.frame_id}\t{r.agent_id}\t{r.x!r}\t{r.y!r}\n" for r in records)


def read_annotations(path: Union[str, Path]) -> List[AnnotationRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh)


def frame_step(frames: Sequence[int]) -> int:
    """Native frame gap: the smallest positive difference between distinct frames."""
    uniq = np.unique(np.asarray(frames, dtype=np.int64))
    if uniq.size < 2:
        return 1
    return int(np.diff(uniq).min())


def build_scenes(records: Sequence[AnnotationRecord], t_in: int = T_IN, t_out: int = T_OUT,
                 stride: int = 1, source_set: str = "", first_scene_id: int = 0) -> List[Scene]:
    """Window records into scenes of agents present at every sampled frame.

    Windows start at every ``stride``-th frame of the progression
    ``first_frame + i * step``; windows without a fully present agent are
    dropped.
    """
    if not records:
        return []
    if stride < 1:
        raise ValueError("stride must be >= 1")
    records = sorted(records, key=lambda r: (r.frame_id, r.agent_id))
    step = frame_step([r.frame_id for r in records])
    first = records[0].frame_id
    last = records[-1].frame_id
    n_slots = (last - first) // step + 1
    length = t_in + t_out

    # slot -> {agent: (x, y)}
    by_slot: dict = {}
    for r in records:
        offset = r.frame_id - first
        if offset % step:
            continue  # off-grid frame
        by_slot.setdefault(offset // step, {})[r.agent_id] = (r.x, r.y)

    scenes = []
    sid = first_scene_id
    for start in range(0, n_slots - length + 1, stride):
        slots = [by_slot.get(start + j, {}) for j in range(length)]
        present = set(slots[0])
        for s in slots[1:]:
            present &= set(s)
            if not present:
                break
        if not present:
            continue
        agents = sorted(present)
        pos = np.array([[slots[j][a] for j in range(length)] for a in agents], dtype=np.float64)
        scenes.append(Scene(sid, agents, pos, source_set, step, first + start * step, t_in, t_out))
        sid += 1
    return scenes


def load_set(root: Union[str, Path], name: str, stride: int = 1) -> List[Scene]:
    """Scenes of one dataset from every ``*.txt`` file in ``root/name``."""
    folder = Path(root) / name
    if not folder.is_dir():
        raise DatasetError(f"dataset directory not found: {folder}")
    files = sorted(folder.glob("*.txt"))
    if not files:
        raise DatasetError(f"no annotation files (*.txt) in {folder}")
    scenes: List[Scene] = []
    for path in files:
        try:
            recs = read_annotations(path)
        except ParseError as exc:
            raise DatasetError(f"{path}: {exc}") from None
        scenes.extend(build_scenes(recs, stride=stride, source_set=name, first_scene_id=len(scenes)))
    return scenes


@dataclass
class SplitSpec:
    test_set: str
    train_sets: List[str]
    val_sets: List[str]
    val_fraction: float = 0.1

    def is_validation(self, scene: Scene) -> bool:
        key = f"{scene.source_set}:{scene.scene_id}".encode()
        return (zlib.crc32(key) % 10_000) < round(self.val_fraction * 10_000)


def make_split(test_set: str, val_fraction: float = 0.1) -> SplitSpec:
    if test_set not in DATASETS:
        raise ValueError(f"unknown dataset {test_set!r}; expected one of {', '.join(DATASETS)}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    rest = [d for d in DATASETS if d != test_set]
    return SplitSpec(test_set, rest, list(rest), val_fraction)


@dataclass
class SplitScenes:
    train: List[Scene] = field(default_factory=list)
    val: List[Scene] = field(default_factory=list)
    test: List[Scene] = field(default_factory=list)


def load_split(root: Union[str, Path], split: SplitSpec, stride: int = 1,
               include_test: bool = True) -> SplitScenes:
    out = SplitScenes()
    for name in split.train_sets:
        for scene in load_set(root, name, stride):
            (out.val if split.is_validation(scene) else out.train).append(scene)
    if include_test:
        out.test = load_set(root, split.test_set, stride)
    return out


def scene_from_records(records: Sequence[AnnotationRecord], t_in: int = T_IN,
                       t_out: Optional[int] = None, scene_id: int = 0) -> Scene:
    """Scene for inference from the last ``t_in`` (+ ``t_out``) sampled frames.

    Agents must be present at every frame used. With ``t_out`` of 0 only the
    observed history is kept and the future block is empty.
    """
    if not records:
        raise DatasetError("scene file holds no records")
    t_out = T_OUT if t_out is None else t_out
    step = frame_step([r.frame_id for r in records])
    frames = sorted({r.frame_id for r in records})
    length = t_in + t_out
    last = frames[-1]
    wanted = [last - (length - 1 - j) * step for j in range(length)]
    table = {(r.frame_id, r.agent_id): (r.x, r.y) for r in records}
    agents = sorted({r.agent_id for r in records if r.frame_id == wanted[0]})
    agents = [a for a in agents if all((f, a) in table for f in wanted)]
    if len(frames) < length or not agents:
        raise DatasetError(f"scene needs {length} sampled frames with a fully observed agent; "
                           f"found {len(frames)} frames")
    pos = np.array([[table[(f, a)] for f in wanted] for a in agents], dtype=np.float64)
    return Scene(scene_id, agents, pos, "", step, wanted[0], t_in, t_out)
