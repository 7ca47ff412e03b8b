"""Small synthetic corpora for smoke tests and overfitting checks."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import numpy as np

from .data import DATASETS, T_IN, T_OUT, AnnotationRecord, Scene, format_annotations


def straight_walker(start, velocity, length: int = T_IN + T_OUT) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)[:, None]
    return np.asarray(start, dtype=np.float64)[None] + t * np.asarray(velocity, dtype=np.float64)[None]


def junction_walker(start, velocity, turn_at: int, angle: float, length: int = T_IN + T_OUT) -> np.ndarray:
    """Straight walk whose heading rotates once by ``angle`` radians at step ``turn_at``."""
    start = np.asarray(start, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    turned = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
    steps = np.array([v if t < turn_at else turned for t in range(1, length)])
    return np.vstack([start[None], start + np.cumsum(steps, axis=0)])


def linear_corpus(n_scenes: int = 10, seed: int = 0) -> List[Scene]:
    """Scenes of two or three agents walking in straight lines with random headings."""
    rng = np.random.default_rng(seed)
    scenes = []
    for sid in range(n_scenes):
        k = int(rng.integers(2, 4))
        tracks = []
        for _ in range(k):
            heading = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(0.2, 0.5)
            tracks.append(straight_walker(rng.uniform(-5, 5, 2), speed * np.array([np.cos(heading), np.sin(heading)])))
        scenes.append(Scene(sid, list(range(1, k + 1)), np.stack(tracks), "synthetic"))
    return scenes


def crossing_pair(origin, speed: float = 0.4, turn: float = 0.0) -> np.ndarray:
    """Two agents approaching each other along x; both rotate by ``turn`` at the junction."""
    origin = np.asarray(origin, dtype=np.float64)
    a = junction_walker(origin + [-4.0, 0.5], [speed, 0.0], T_IN, turn)
    b = junction_walker(origin + [4.0, -0.5], [-speed, 0.0], T_IN, turn)
    return np.stack([a, b])


def desk_corpus(n_straight: int = 9, seed: int = 100, speed: float = 0.4) -> List[Scene]:
    """Straight-walker scenes plus one junction scene (the last one).

    Every scene shows the same observed approach: two pedestrians walking
    toward each other. In the straight scenes they keep walking; in the
    junction scene both turn left by 90 degrees at the junction. Identical
    histories with two distinct futures can only be fitted by using two
    modes. Scenes differ by a random translation.
    """
    rng = np.random.default_rng(seed)
    scenes = [Scene(i, [1, 2], crossing_pair(rng.uniform(-5, 5, 2), speed), "synthetic")
              for i in range(n_straight)]
    scenes.append(Scene(n_straight, [1, 2], crossing_pair(rng.uniform(-5, 5, 2), speed, np.pi / 2), "synthetic"))
    return scenes


def walker_records(n_agents: int, n_frames: int, seed: int = 0, frame_step: int = 10) -> List[AnnotationRecord]:
    """Annotation records of straight walkers that all span ``n_frames`` frames."""
    rng = np.random.default_rng(seed)
    recs = []
    for a in range(n_agents):
        heading = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.2, 0.5)
        track = straight_walker(rng.uniform(-5, 5, 2), speed * np.array([np.cos(heading), np.sin(heading)]), n_frames)
        for t in range(n_frames):
            recs.append(AnnotationRecord(t * frame_step, a + 1, float(track[t, 0]), float(track[t, 1])))
    return sorted(recs, key=lambda r: (r.frame_id, r.agent_id))


def write_dataset(root, names: Sequence[str] = DATASETS, n_agents: int = 2, n_frames: int = 26,
                  seed: int = 0) -> Path:
    """Write a tiny synthetic corpus laid out as ``root/<name>/<name>.txt``."""
    root = Path(root)
    for i, name in enumerate(names):
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        (folder / f"{name}.txt").write_text(format_annotations(walker_records(n_agents, n_frames, seed + i)),
                                            encoding="utf-8")
    return root
