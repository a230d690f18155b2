"""Checkpoint directories: ``manifest.json`` plus ``weights.bin``.

``weights.bin`` holds every parameter and batch-norm running statistic as
little-endian float64, concatenated in manifest order.  The manifest
records, per tensor, its name, layer kind, shape, byte offset, path tag
and the block kind / alpha / beta of the block it belongs to, together
with the network spec needed to rebuild the graph.
"""
from __future__ import annotations

import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..blocks import Network, NetworkSpec, make_network

FORMAT = "gstconv-checkpoint"
VERSION = 1
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def _tensors(net: Network):
    """(name, array, entry metadata) in the canonical order."""
    for info in net.layers():
        unit = info.unit
        meta = {
            "layer_kind": info.kind,
            "path": info.path,
            "stage": info.stage,
            "block_index": info.block,
            "block": None if unit is None else unit.block.name,
            "alpha": None if unit is None or unit.block.alpha is None else str(unit.block.alpha),
            "beta": None if unit is None or unit.block.beta is None else str(unit.block.beta),
        }
        for name, value, _ in info.module.own_parameters():
            yield name, value, {"role": "parameter", **meta}
        for name, value in info.module.own_buffers():
            yield name, value, {"role": "buffer", **meta}


def save_checkpoint(net: Network, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, value, meta in _tensors(net):
        data = np.ascontiguousarray(value, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(data), **meta})
        chunks.append(data)
        offset += len(data)
    spec = replace(net.spec, dropout=float(net.head.dropout))
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": DTYPE,
        "network": spec.to_dict(),
        "total_bytes": offset,
        "tensors": entries,
    }
    (path / "weights.bin").write_bytes(b"".join(chunks))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path) -> Network:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"incomplete checkpoint at {path}: {e}") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint format/version: {manifest.get('format')} v{manifest.get('version')}")
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(f"weights.bin has {len(blob)} bytes, manifest expects {manifest['total_bytes']}")
    net = make_network(NetworkSpec.from_dict(manifest["network"]))
    expected = list(_tensors(net))
    if len(expected) != len(manifest["tensors"]):
        raise CheckpointError("manifest tensor list does not match the rebuilt network")
    for (name, value, _), entry in zip(expected, manifest["tensors"]):
        if entry["name"] != name or tuple(entry["shape"]) != value.shape:
            raise CheckpointError(f"manifest entry {entry['name']} {entry['shape']} != network {name} {value.shape}")
        end = entry["offset"] + entry["nbytes"]
        if entry["nbytes"] != value.size * 8 or end > len(blob):
            raise CheckpointError(f"byte range of {name} is inconsistent")
        value[...] = np.frombuffer(blob, dtype=DTYPE, count=value.size, offset=entry["offset"]).reshape(value.shape)
    return net


def default_output_dir() -> Path:
    return Path(os.environ.get("GSTCONV_OUTPUT_DIR", "runs"))
