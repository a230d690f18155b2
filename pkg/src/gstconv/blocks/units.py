"""The six spatio-temporal replacements for a 3x3 convolution.

Each constructor returns a `SpatioTemporalUnit`: the convolution part of
the block followed by one batch norm over all of its output channels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..tensor_core import ConvSpec
from .layers import BatchNorm, Conv, Module, ParallelConcat, ReLU, Sequential

KINDS = ("c2d", "c3d", "c3d_group", "p3d", "gst_large", "gst")


def to_fraction(value) -> Fraction:
    """Accept 0.25, "0.25", "1/4" or a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1 << 16)
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class ChannelSplit:
    out_spatial: int
    out_temporal: int
    in_spatial: int
    in_temporal: int
    spatial_in: slice
    temporal_in: slice


@dataclass(frozen=True)
class GstConfig:
    """Channel proportions of a grouped spatial-temporal block.

    alpha is the share of output channels given to the temporal path;
    beta is the share of input channels each path reads (1 or 1/2).
    """

    alpha: Fraction = Fraction(1, 4)
    beta: Fraction = Fraction(1, 2)
    spatial_kernel: tuple[int, int] = (3, 3)
    temporal_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "alpha", to_fraction(self.alpha))
        object.__setattr__(self, "beta", to_fraction(self.beta))
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta not in (Fraction(1), Fraction(1, 2)):
            raise ValueError(f"beta must be 1 or 1/2, got {self.beta}")

    def split(self, c_in: int, c_out: int) -> ChannelSplit:
        out_t = math.floor(self.alpha * c_out + Fraction(1, 2))
        out_s = c_out - out_t
        if out_s < 1 or out_t < 1:
            raise ValueError(f"alpha={self.alpha} with C_o={c_out} leaves an empty path")
        if self.beta == 1:
            return ChannelSplit(out_s, out_t, c_in, c_in, slice(0, c_in), slice(0, c_in))
        if c_in % 2:
            raise ValueError(f"beta=1/2 needs an even input channel count, got {c_in}")
        half = c_in // 2
        return ChannelSplit(out_s, out_t, half, half, slice(0, half), slice(c_in - half, c_in))


@dataclass(frozen=True)
class BlockKind:
    name: str
    alpha: Fraction | None = None
    groups: int = 1
    temporal_kernel: int = 3
    spatial_kernel: int = 3

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown block kind {self.name!r}; expected one of {KINDS}")
        if self.name in ("gst", "gst_large"):
            object.__setattr__(self, "alpha", to_fraction(self.alpha if self.alpha is not None else Fraction(1, 4)))
        elif self.alpha is not None:
            raise ValueError(f"{self.name} takes no alpha")
        if self.name == "c3d_group":
            if self.groups < 1:
                raise ValueError("groups must be >= 1")
        elif self.groups != 1:
            raise ValueError(f"{self.name} takes no groups")

    @classmethod
    def c2d(cls, **kw):
        return cls("c2d", **kw)

    @classmethod
    def c3d(cls, **kw):
        return cls("c3d", **kw)

    @classmethod
    def c3d_group(cls, groups=2, **kw):
        return cls("c3d_group", groups=groups, **kw)

    @classmethod
    def p3d(cls, **kw):
        return cls("p3d", **kw)

    @classmethod
    def gst(cls, alpha=Fraction(1, 4), **kw):
        return cls("gst", alpha=to_fraction(alpha), **kw)

    @classmethod
    def gst_large(cls, alpha=Fraction(1, 4), **kw):
        return cls("gst_large", alpha=to_fraction(alpha), **kw)

    @classmethod
    def parse(cls, text: str) -> "BlockKind":
        """Parse "c2d", "p3d", "c3d", "c3d-group:2", "gst:1/4", "gst-large:0.25"."""
        name, _, arg = text.strip().lower().replace("-", "_").partition(":")
        if name == "c3d_group":
            return cls.c3d_group(int(arg) if arg else 2)
        if name in ("gst", "gst_large"):
            return cls(name, alpha=to_fraction(arg) if arg else Fraction(1, 4))
        if arg:
            raise ValueError(f"{name} takes no argument")
        return cls(name)

    @property
    def beta(self) -> Fraction | None:
        return {"gst": Fraction(1, 2), "gst_large": Fraction(1)}.get(self.name)

    @property
    def is_grouped_st(self) -> bool:
        return self.name in ("gst", "gst_large")

    def config(self) -> GstConfig:
        if not self.is_grouped_st:
            raise ValueError(f"{self.name} has no spatial/temporal channel split")
        return GstConfig(self.alpha, self.beta, (self.spatial_kernel,) * 2, self.temporal_kernel)

    @property
    def label(self) -> str:
        if self.name == "c3d_group":
            return f"c3d-group:{self.groups}"
        if self.is_grouped_st:
            return f"{self.name.replace('_', '-')}:{self.alpha}"
        return self.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alpha": None if self.alpha is None else str(self.alpha),
            "beta": None if self.beta is None else str(self.beta),
            "groups": self.groups,
            "temporal_kernel": self.temporal_kernel,
            "spatial_kernel": self.spatial_kernel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockKind":
        alpha = None if d.get("alpha") is None else Fraction(d["alpha"])
        return cls(d["name"], alpha, d.get("groups", 1), d.get("temporal_kernel", 3), d.get("spatial_kernel", 3))


class SpatioTemporalUnit(Module):
    """Convolution part of a block kind plus the batch norm that follows it."""

    kind = "st_unit"

    def __init__(self, name: str, block: BlockKind, body: Module, bn: BatchNorm,
                 c_in: int, c_out: int, split: ChannelSplit | None = None):
        super().__init__(name)
        self.block, self.body, self.bn = block, body, bn
        self.c_in, self.c_out, self.split = c_in, c_out, split

    def children(self):
        return [self.body, self.bn]

    @property
    def spatial_channels(self) -> range | None:
        return None if self.split is None else range(0, self.split.out_spatial)

    @property
    def temporal_channels(self) -> range | None:
        return None if self.split is None else range(self.split.out_spatial, self.c_out)

    def convs(self) -> list[Conv]:
        return [m for m in self.body.modules() if isinstance(m, Conv)]

    def weight_count(self) -> int:
        return sum(c.layer.weight.size for c in self.convs())

    def forward(self, x, train=False):
        return self.bn.forward(self.body.forward(x, train), train)

    def backward(self, grad):
        return self.body.backward(self.bn.backward(grad))

    def trace(self, shape, records, unit=None):
        shape = self.body.trace(shape, records, self)
        return self.bn.trace(shape, records, self)


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


def make_gst_block(c_in: int, c_out: int, cfg: GstConfig, stride: int = 1,
                   rng: np.random.Generator | None = None, name: str = "gst") -> SpatioTemporalUnit:
    """Parallel spatial (1 x kh x kw) and temporal (kt x kh x kw) paths,
    concatenated spatial-first, then one batch norm."""
    rng = _rng(rng)
    sp = cfg.split(c_in, c_out)
    kh, kw = cfg.spatial_kernel
    kt = cfg.temporal_kernel
    s = (1, stride, stride)
    spatial = Conv(f"{name}.spatial", ConvSpec(sp.in_spatial, sp.out_spatial, (1, kh, kw), s, (0, kh // 2, kw // 2)), rng, "spatial")
    temporal = Conv(f"{name}.temporal", ConvSpec(sp.in_temporal, sp.out_temporal, (kt, kh, kw), s, (kt // 2, kh // 2, kw // 2)), rng, "temporal")
    body = ParallelConcat(f"{name}.paths", spatial, temporal, sp.spatial_in, sp.temporal_in)
    kind = "gst" if cfg.beta == Fraction(1, 2) else "gst_large"
    block = BlockKind(kind, cfg.alpha, temporal_kernel=kt, spatial_kernel=kh)
    return SpatioTemporalUnit(name, block, body, BatchNorm(f"{name}.bn", c_out), c_in, c_out, sp)


def make_block(kind: BlockKind, c_in: int, c_out: int, stride: int = 1,
               rng: np.random.Generator | None = None, name: str = "block") -> SpatioTemporalUnit:
    rng = _rng(rng)
    if kind.is_grouped_st:
        return make_gst_block(c_in, c_out, kind.config(), stride, rng, name)
    k, kt = kind.spatial_kernel, kind.temporal_kernel
    s = (1, stride, stride)
    if kind.name == "c2d":
        body = Conv(f"{name}.conv", ConvSpec(c_in, c_out, (1, k, k), s, (0, k // 2, k // 2)), rng)
    elif kind.name in ("c3d", "c3d_group"):
        spec = ConvSpec(c_in, c_out, (kt, k, k), s, (kt // 2, k // 2, k // 2), groups=kind.groups)
        body = Conv(f"{name}.conv", spec, rng)
    else:  # p3d: spatial conv, BN, ReLU, temporal conv
        body = Sequential(f"{name}.cascade", [
            Conv(f"{name}.spatial", ConvSpec(c_in, c_out, (1, k, k), s, (0, k // 2, k // 2)), rng, "spatial"),
            BatchNorm(f"{name}.mid_bn", c_out),
            ReLU(f"{name}.mid_relu"),
            Conv(f"{name}.temporal", ConvSpec(c_out, c_out, (kt, 1, 1), 1, (kt // 2, 0, 0)), rng, "temporal"),
        ])
    return SpatioTemporalUnit(name, kind, body, BatchNorm(f"{name}.bn", c_out), c_in, c_out)
