"""Post-hoc diagnostics for trained networks.

* BN attribution: the |gamma| of the batch norm after each grouped
  spatial-temporal block, split into the spatial and temporal channel
  groups and histogrammed on shared bins.
* Per-frame traces: class scores of every frame before temporal averaging.
* Shuffle sensitivity: how much the clip logits move when frames are permuted.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .blocks import Network, SpatioTemporalUnit
from .tensor_core import as_tensor5, softmax

SCHEMA_VERSION = 1
HIST_BINS = 20


@dataclass
class BnAttribution:
    block: str
    stage: int | None
    block_index: int | None
    spatial: np.ndarray
    temporal: np.ndarray
    bin_edges: np.ndarray
    spatial_hist: np.ndarray
    temporal_hist: np.ndarray

    @property
    def spatial_mean(self) -> float:
        return float(self.spatial.mean())

    @property
    def temporal_mean(self) -> float:
        return float(self.temporal.mean())

    @property
    def spatial_median(self) -> float:
        return float(np.median(self.spatial))

    @property
    def temporal_median(self) -> float:
        return float(np.median(self.temporal))

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "stage": self.stage,
            "block_index": self.block_index,
            "spatial_abs_gamma": self.spatial.tolist(),
            "temporal_abs_gamma": self.temporal.tolist(),
            "spatial_mean": self.spatial_mean,
            "temporal_mean": self.temporal_mean,
            "spatial_median": self.spatial_median,
            "temporal_median": self.temporal_median,
            "bin_edges": self.bin_edges.tolist(),
            "spatial_hist": self.spatial_hist.tolist(),
            "temporal_hist": self.temporal_hist.tolist(),
        }


def _unit_positions(net: Network) -> dict[int, tuple]:
    return {id(i.unit): (i.stage, i.block) for i in net.layers() if i.unit is not None}


def extract_bn_attribution(net: Network, bins: int = HIST_BINS) -> list[BnAttribution]:
    units = [u for u in net.units() if isinstance(u, SpatioTemporalUnit) and u.split is not None]
    if not units:
        raise ValueError("network has no grouped spatial-temporal blocks to attribute")
    where = _unit_positions(net)
    out = []
    for u in units:
        g = np.abs(u.bn.layer.gamma)
        s = g[u.spatial_channels.start : u.spatial_channels.stop]
        t = g[u.temporal_channels.start : u.temporal_channels.stop]
        top = float(g.max()) or 1.0
        edges = np.linspace(0.0, top, bins + 1)
        stage, idx = where.get(id(u), (None, None))
        out.append(BnAttribution(u.name, stage, idx, s, t, edges,
                                 np.histogram(s, edges)[0], np.histogram(t, edges)[0]))
    return out


def stage_summary(attrs: list[BnAttribution]) -> dict[int, dict[str, float]]:
    """Mean |gamma| per group, pooled over all channels of each stage."""
    out = {}
    for stage in sorted({a.stage for a in attrs if a.stage is not None}):
        sel = [a for a in attrs if a.stage == stage]
        out[stage] = {
            "spatial_mean": float(np.concatenate([a.spatial for a in sel]).mean()),
            "temporal_mean": float(np.concatenate([a.temporal for a in sel]).mean()),
        }
    return out


def attribution_to_json(attrs: list[BnAttribution]) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "blocks": [a.to_dict() for a in attrs],
        "stages": {str(k): v for k, v in stage_summary(attrs).items()},
    }
    return json.dumps(doc, indent=2) + "\n"


def histograms_to_csv(attrs: list[BnAttribution]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "bin_left", "bin_right", "spatial_count", "temporal_count"])
    for a in attrs:
        for i in range(len(a.spatial_hist)):
            w.writerow([a.block, repr(float(a.bin_edges[i])), repr(float(a.bin_edges[i + 1])),
                        int(a.spatial_hist[i]), int(a.temporal_hist[i])])
    return buf.getvalue()


@dataclass
class FrameTrace:
    frame_classes: np.ndarray  # (T, k) class ids, best first
    frame_scores: np.ndarray  # (T, k)
    final_classes: np.ndarray  # (k,)
    final_scores: np.ndarray  # (k,)
    per_frame_logits: np.ndarray  # (T, K)
    logits: np.ndarray  # (K,)

    @property
    def prediction(self) -> int:
        return int(self.final_classes[0])

    def to_dict(self, class_names=None) -> dict:
        name = (lambda c: class_names[c]) if class_names else int
        return {
            "schema_version": SCHEMA_VERSION,
            "frames": [
                {"frame": t, "classes": [name(int(c)) for c in cs], "scores": sc.tolist()}
                for t, (cs, sc) in enumerate(zip(self.frame_classes, self.frame_scores))
            ],
            "final": {"classes": [name(int(c)) for c in self.final_classes], "scores": self.final_scores.tolist()},
        }


def _top_k(p: np.ndarray, k: int):
    order = np.argsort(-p, axis=-1, kind="stable")[..., :k]
    return order, np.take_along_axis(p, order, axis=-1)


def per_frame_trace(net: Network, clip: np.ndarray, k: int = 1) -> FrameTrace:
    """Softmax scores of each frame's logits and of their temporal mean."""
    clip = as_tensor5(clip)
    if clip.shape[0] != 1:
        raise ValueError("per_frame_trace takes a single clip (N = 1)")
    num_classes = net.spec.num_classes
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must be between 1 and {num_classes}")
    logits, per_frame = net.forward(clip, "eval")
    fc, fs = _top_k(softmax(per_frame[0]), k)
    cc, cs = _top_k(softmax(logits[0]), k)
    return FrameTrace(fc, fs, cc, cs, per_frame[0], logits[0])


def shuffle_sensitivity(net: Network, clip: np.ndarray, trials: int = 8,
                        rng: np.random.Generator | None = None, permutations=None) -> float:
    """Mean over random frame permutations of ||logits(perm(clip)) - logits(clip)||_1 / K.

    Explicit `permutations` replace the random draws.
    """
    clip = as_tensor5(clip)
    t = clip.shape[2]
    if t < 2:
        raise ValueError("need at least two frames to shuffle")
    rng = rng if rng is not None else np.random.default_rng(0)
    if permutations is None:
        permutations = [rng.permutation(t) for _ in range(trials)]
    base, _ = net.forward(clip, "eval")
    devs = []
    for perm in permutations:
        shuffled, _ = net.forward(clip[:, :, np.asarray(perm)], "eval")
        devs.append(np.abs(shuffled - base).sum(axis=1).mean() / base.shape[1])
    return float(np.mean(devs))
