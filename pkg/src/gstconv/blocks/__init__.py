"""Block families, ResNet assembly and segment sampling."""
from .layers import (BatchNorm, Conv, Head, MaxPool, Module, ParallelConcat, ReLU, Residual,
                     Sequential, TraceRecord)
from .network import BACKBONES, LayerInfo, Network, NetworkSpec, forward, make_network, tiny_spec
from .sampling import sample_segments
from .units import (KINDS, BlockKind, ChannelSplit, GstConfig, SpatioTemporalUnit, make_block,
                    make_gst_block, to_fraction)

__all__ = [
    "BACKBONES", "KINDS", "BatchNorm", "BlockKind", "ChannelSplit", "Conv", "GstConfig", "Head",
    "LayerInfo", "MaxPool", "Module", "Network", "NetworkSpec", "ParallelConcat", "ReLU", "Residual",
    "Sequential", "SpatioTemporalUnit", "TraceRecord", "forward", "make_block", "make_gst_block",
    "make_network", "sample_segments", "tiny_spec", "to_fraction",
]
