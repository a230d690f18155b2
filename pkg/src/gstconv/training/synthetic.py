"""Moving-square clips with classes that differ only in frame order.

The two motion classes are exact time reversals of each other: clip i of
``right_to_left`` is clip i of ``left_to_right`` played backwards, noise
included, so both contain the same set of frames.  Any model that is
invariant to frame order is therefore at chance on that pair.  The two
static classes can be told apart from a single frame: static squares
sit in the top or bottom third of the image, moving ones in the middle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

# program(rng, spec) -> (T, 2) array of top-left (row, col) positions
MotionProgram = Callable[[np.random.Generator, "SyntheticSpec"], np.ndarray]


def _band_rows(spec, band):
    """Top-left rows keeping the square inside horizontal band 0, 1 or 2."""
    height = spec.image_size // 3
    if height < spec.square:
        raise ValueError("image too small for three square-height bands")
    return band * height, (band + 1) * height - spec.square


def _left_to_right(rng, spec):
    t = np.arange(spec.clip_length)
    span = spec.step * (spec.clip_length - 1)
    if span + spec.square > spec.image_size:
        raise ValueError("square does not fit its trajectory; shorten the clip or the step")
    lo, hi = _band_rows(spec, 1)
    row = rng.integers(lo, hi + 1)
    col0 = rng.integers(0, spec.image_size - spec.square - span + 1)
    return np.stack([np.full_like(t, row), col0 + spec.step * t], axis=1)


def _static(band: int):
    def program(rng, spec):
        lo, hi = _band_rows(spec, band)
        row = rng.integers(lo, hi + 1)
        col = rng.integers(0, spec.image_size - spec.square + 1)
        return np.tile([row, col], (spec.clip_length, 1))
    return program


PROGRAMS: dict[str, MotionProgram] = {
    "left_to_right": _left_to_right,
    "static_top": _static(0),
    "static_bottom": _static(2),
}
# classes defined as the time reversal of another program
REVERSALS = {"right_to_left": "left_to_right"}

DEFAULT_CLASSES = ("left_to_right", "right_to_left", "static_top", "static_bottom")


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 32
    clip_length: int = 8
    classes: tuple[str, ...] = DEFAULT_CLASSES
    samples_per_class: int = 32
    noise: float = 0.05
    seed: int = 0
    square: int = 6
    step: int = 3
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        for c in self.classes:
            if c not in PROGRAMS and c not in REVERSALS:
                raise ValueError(f"unknown motion program {c!r}")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")
        if not any(c in REVERSALS and REVERSALS[c] in self.classes for c in self.classes):
            raise ValueError("need at least one order-contrastive class pair")
        if self.samples_per_class < 1 or self.noise < 0:
            raise ValueError("samples_per_class must be >= 1 and noise >= 0")


@dataclass
class SyntheticDataset:
    clips: np.ndarray  # (num_clips, C, T, H, W)
    labels: np.ndarray  # (num_clips,)
    class_names: tuple[str, ...]
    spec: SyntheticSpec = field(repr=False, default=None)

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for clip, y in zip(self.clips, self.labels):
            yield clip[None], int(y)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, class_names) -> "SyntheticDataset":
        """Clips of the given classes, labels kept in the full label space."""
        ids = [self.class_names.index(c) for c in class_names]
        keep = np.isin(self.labels, ids)
        return SyntheticDataset(self.clips[keep], self.labels[keep], self.class_names, self.spec)


def render(positions: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """Noise-free (C, T, H, W) clip with a unit-intensity square per frame."""
    clip = np.zeros((spec.channels, len(positions), spec.image_size, spec.image_size))
    for t, (r, c) in enumerate(positions):
        clip[:, t, r : r + spec.square, c : c + spec.square] = 1.0
    return clip


def gen_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic in `spec.seed`; clips ordered class by class."""
    rng = np.random.default_rng(spec.seed)
    made: dict[str, list[np.ndarray]] = {}
    for name in spec.classes:
        if name in REVERSALS and REVERSALS[name] in spec.classes:
            continue
        program = PROGRAMS.get(name) or PROGRAMS[REVERSALS[name]]
        clips = []
        for _ in range(spec.samples_per_class):
            pos = program(rng, spec)
            if name in REVERSALS:
                pos = pos[::-1]
            clip = render(pos, spec)
            if spec.noise > 0:
                clip = clip + rng.normal(0.0, spec.noise, clip.shape)
            clips.append(clip)
        made[name] = clips
    for name, src in REVERSALS.items():
        if name in spec.classes and src in spec.classes:
            made[name] = [np.ascontiguousarray(c[:, ::-1]) for c in made[src]]
    clips, labels = [], []
    for i, name in enumerate(spec.classes):
        clips.extend(made[name])
        labels.extend([i] * len(made[name]))
    return SyntheticDataset(np.stack(clips), np.array(labels, dtype=np.int64), spec.classes, spec)
