"""ResNet-18/50 video networks in which only the 3x3 convolutions are
swapped for a chosen spatio-temporal block kind.

The stem, 1x1 convolutions and shortcuts stay per-frame 2D and no layer
ever strides over time, so the clip keeps all of its frames until the
head averages the per-frame logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from ..tensor_core import ConvSpec, ShapeError, as_tensor5
from .layers import BatchNorm, Conv, Head, MaxPool, Module, ReLU, Residual, Sequential, TraceRecord
from .units import BlockKind, SpatioTemporalUnit, make_block

BACKBONES = {
    # stage block counts, residual block type, expansion
    "resnet18": ((2, 2, 2, 2), "basic", 1),
    "resnet50": ((3, 4, 6, 3), "bottleneck", 4),
}


@dataclass(frozen=True)
class NetworkSpec:
    backbone: str = "resnet50"
    block: BlockKind = field(default_factory=BlockKind.c2d)
    num_classes: int = 174
    frames: int = 8
    height: int = 224
    width: int = 224
    in_channels: int = 3
    base_width: int = 64
    num_stages: int = 4
    blocks_per_stage: tuple[int, ...] | None = None
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {sorted(BACKBONES)}")
        if not 1 <= self.num_stages <= 4:
            raise ValueError("num_stages must be between 1 and 4")
        if self.blocks_per_stage is not None:
            object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
            if len(self.blocks_per_stage) != self.num_stages or min(self.blocks_per_stage) < 1:
                raise ValueError("blocks_per_stage needs one positive count per stage")
        if min(self.num_classes, self.frames, self.height, self.width, self.in_channels, self.base_width) < 1:
            raise ValueError("sizes must be positive")

    @property
    def stage_blocks(self) -> tuple[int, ...]:
        if self.blocks_per_stage is not None:
            return self.blocks_per_stage
        return BACKBONES[self.backbone][0][: self.num_stages]

    @property
    def input_shape(self) -> tuple[int, int, int, int, int]:
        return (1, self.in_channels, self.frames, self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "block": self.block.to_dict(),
            "num_classes": self.num_classes,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "num_stages": self.num_stages,
            "blocks_per_stage": None if self.blocks_per_stage is None else list(self.blocks_per_stage),
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["block"] = BlockKind.from_dict(d["block"])
        if d.get("blocks_per_stage") is not None:
            d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        return cls(**d)


def tiny_spec(block: BlockKind, **overrides) -> NetworkSpec:
    """Two-stage, width-16 ResNet-18 style network used for desk-scale experiments."""
    base = NetworkSpec(backbone="resnet18", block=block, num_classes=4, frames=8, height=32, width=32,
                       in_channels=1, base_width=16, num_stages=2, blocks_per_stage=(1, 1))
    return replace(base, **overrides)


@dataclass
class LayerInfo:
    name: str
    kind: str
    stage: int | None
    block: int | None
    path: str
    module: Module
    unit: SpatioTemporalUnit | None = None


def _plain(name, c_in, c_out, k, stride, rng):
    """Per-frame 2D conv followed by BN."""
    p = k // 2
    return Sequential(name, [
        Conv(f"{name}.conv", ConvSpec(c_in, c_out, (1, k, k), (1, stride, stride), (0, p, p)), rng),
        BatchNorm(f"{name}.bn", c_out),
    ])


def _basic_block(name, c_in, width, stride, kind, rng):
    body = Sequential(f"{name}.body", [
        make_block(kind, c_in, width, stride, rng, f"{name}.st1"),
        ReLU(f"{name}.relu1"),
        make_block(kind, width, width, 1, rng, f"{name}.st2"),
    ])
    shortcut = None
    if stride != 1 or c_in != width:
        shortcut = _plain(f"{name}.shortcut", c_in, width, 1, stride, rng)
    return Residual(name, body, shortcut), width


def _bottleneck(name, c_in, width, stride, kind, rng):
    c_out = width * 4
    body = Sequential(f"{name}.body", [
        _plain(f"{name}.reduce", c_in, width, 1, 1, rng),
        ReLU(f"{name}.relu1"),
        make_block(kind, width, width, stride, rng, f"{name}.st"),
        ReLU(f"{name}.relu2"),
        _plain(f"{name}.expand", width, c_out, 1, 1, rng),
    ])
    shortcut = None
    if stride != 1 or c_in != c_out:
        shortcut = _plain(f"{name}.shortcut", c_in, c_out, 1, stride, rng)
    return Residual(name, body, shortcut), c_out


class Network:
    """Stem, residual stages and the frame-average head.

    Parameter names are dotted paths such as ``stage2.block0.st.spatial.weight``.
    """

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        w0 = spec.base_width
        self.stem = Sequential("stem", [
            Conv("stem.conv", ConvSpec(spec.in_channels, w0, (1, 7, 7), (1, 2, 2), (0, 3, 3)), rng),
            BatchNorm("stem.bn", w0),
            ReLU("stem.relu"),
            MaxPool("stem.pool"),
        ])
        _, block_type, _ = BACKBONES[spec.backbone]
        make_res = _basic_block if block_type == "basic" else _bottleneck
        self.stages: list[list[Residual]] = []
        c = w0
        for s, count in enumerate(spec.stage_blocks):
            width = w0 * 2 ** s
            blocks = []
            for b in range(count):
                stride = 2 if (s > 0 and b == 0) else 1
                blk, c = make_res(f"stage{s + 1}.block{b}", c, width, stride, spec.block, rng)
                blocks.append(blk)
            self.stages.append(blocks)
        self.final_channels = c
        self.head = Head("head", c, spec.num_classes, rng, spec.dropout)
        self.dropout_rng = np.random.default_rng(spec.seed + 1)
        names = [n for n, _, _ in self.parameters()] + [n for n, _ in self.buffers()]
        if len(names) != len(set(names)):
            raise AssertionError("duplicate parameter names")

    # -- structure ----------------------------------------------------------

    def top_modules(self) -> list[Module]:
        return [self.stem, *[b for st in self.stages for b in st], self.head]

    def modules(self) -> Iterator[Module]:
        for m in self.top_modules():
            yield from m.modules()

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for m in self.top_modules():
            yield from m.parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for m in self.top_modules():
            yield from m.buffers()

    def param_dict(self) -> dict[str, np.ndarray]:
        return {n: v for n, v, _ in self.parameters()}

    def grad_dict(self) -> dict[str, np.ndarray]:
        return {n: g for n, _, g in self.parameters()}

    def zero_grad(self):
        for _, _, g in self.parameters():
            g[...] = 0.0

    def units(self) -> list[SpatioTemporalUnit]:
        return [m for m in self.modules() if isinstance(m, SpatioTemporalUnit)]

    def layers(self) -> list[LayerInfo]:
        """Ordered leaf layers with stage/block indices and path tags."""
        out = []

        def visit(m, stage, block, unit):
            if isinstance(m, SpatioTemporalUnit):
                unit = m
            kids = m.children()
            if not kids:
                out.append(LayerInfo(m.name, m.kind, stage, block, getattr(m, "path", "shared"), m, unit))
            for k in kids:
                visit(k, stage, block, unit)

        visit(self.stem, None, None, None)
        for s, blocks in enumerate(self.stages):
            for b, blk in enumerate(blocks):
                visit(blk, s + 1, b, None)
        visit(self.head, None, None, None)
        return out

    def trace(self, input_shape=None) -> list[TraceRecord]:
        shape = tuple(input_shape or self.spec.input_shape)
        records: list[TraceRecord] = []
        for m in self.top_modules():
            shape = m.trace(shape, records)
        return records

    # -- computation --------------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None):
        """Return (logits N x K, per-frame logits N x T x K).

        Any T, H, W large enough for the strides is accepted; the channel
        count must match the spec.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = as_tensor5(x)
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"network expects {self.spec.in_channels} input channels, got {x.shape[1]}")
        train = mode == "train"
        for m in self.top_modules()[:-1]:
            x = m.forward(x, train)
        return self.head.forward(x, train, rng if rng is not None else self.dropout_rng)

    def backward(self, grad_logits: np.ndarray, grad_per_frame: np.ndarray | None = None) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input clip."""
        g = self.head.backward(grad_logits, grad_per_frame)
        for m in reversed(self.top_modules()[:-1]):
            g = m.backward(g)
        return g


def make_network(spec: NetworkSpec, rng: np.random.Generator | None = None) -> Network:
    return Network(spec, rng)


def forward(net: Network, batch: np.ndarray, mode: str = "eval", rng=None):
    return net.forward(batch, mode, rng)
