"""Sparse segment sampling of frame indices."""
from __future__ import annotations

import numpy as np


def sample_segments(total_frames: int, num_segments: int, mode: str = "eval",
                    rng: np.random.Generator | None = None) -> list[int]:
    """Split ``range(total_frames)`` into `num_segments` contiguous,
    near-equal segments and pick one index from each.

    Train mode draws uniformly within each segment; eval mode takes the
    middle (the lower middle for even-length segments).  Clips shorter
    than `num_segments` are treated as if repeated, giving
    ``floor(i * total / K)`` in both modes.
    """
    if total_frames < 1 or num_segments < 1:
        raise ValueError("total_frames and num_segments must be >= 1")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if total_frames < num_segments:
        return [i * total_frames // num_segments for i in range(num_segments)]
    if mode == "train" and rng is None:
        rng = np.random.default_rng()
    out = []
    for i in range(num_segments):
        start = i * total_frames // num_segments
        end = (i + 1) * total_frames // num_segments
        if mode == "train":
            out.append(int(rng.integers(start, end)))
        else:
            out.append(start + (end - start - 1) // 2)
    return out
