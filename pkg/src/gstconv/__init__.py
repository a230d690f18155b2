"""Grouped spatial-temporal convolution blocks for video networks, in numpy."""
from .blocks import BlockKind, GstConfig, Network, NetworkSpec, make_block, make_gst_block, make_network

__version__ = "0.1.0"

__all__ = ["BlockKind", "GstConfig", "Network", "NetworkSpec", "make_block", "make_gst_block", "make_network"]
