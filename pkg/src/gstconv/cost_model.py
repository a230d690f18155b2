"""Parameter and multiply-accumulate accounting.

Every row carries two parameter counts: one enumerated from the weight
arrays of the built network and one from the closed-form expression for
that layer type.  They must agree exactly.  MACs follow the usual video
literature convention of reporting one MAC as one FLOP, with only
convolutions and the linear classifier counted.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

from .blocks import BatchNorm, BlockKind, Conv, Head, Network, NetworkSpec, SpatioTemporalUnit, make_network
from .tensor_core import ConvSpec

SCHEMA_VERSION = 1
FLOP_CONVENTION = "1 FLOP = 1 MAC; convolutions and linear head only"
CSV_COLUMNS = ("layer", "kind", "params", "params_formula", "macs")


def block_params_closed_form(kind: BlockKind, c_in: int, c_out: int) -> int:
    """Weight count of one block of `kind` mapping c_in -> c_out channels.

    Channel splits for the grouped spatial-temporal kinds are the integer
    ones used by the constructors, so the value is exact even when
    alpha * C_o is not an integer.
    """
    hw = kind.spatial_kernel ** 2
    t = kind.temporal_kernel
    if kind.name == "c2d":
        return hw * c_in * c_out
    if kind.name == "c3d":
        return t * hw * c_in * c_out
    if kind.name == "c3d_group":
        if c_in % kind.groups or c_out % kind.groups:
            raise ValueError(f"groups={kind.groups} must divide {c_in} and {c_out}")
        return t * hw * c_in * c_out // kind.groups
    if kind.name == "p3d":
        return hw * c_in * c_out + t * c_out * c_out
    sp = kind.config().split(c_in, c_out)
    return sp.out_spatial * sp.in_spatial * hw + sp.out_temporal * sp.in_temporal * t * hw


def block_params_rational(kind: BlockKind, c_in: int, c_out: int) -> Fraction:
    """The textbook per-kind formulas with real-valued alpha (no rounding)."""
    hw = Fraction(kind.spatial_kernel ** 2)
    t = kind.temporal_kernel
    if kind.name == "c2d":
        return hw * c_in * c_out
    if kind.name == "c3d":
        return t * hw * c_in * c_out
    if kind.name == "c3d_group":
        return t * hw / kind.groups * c_in * c_out
    if kind.name == "p3d":
        return (hw + t) * c_in * c_out if c_in == c_out else hw * c_in * c_out + t * c_out ** 2
    a = kind.alpha
    full = (1 - a + a * t) * hw * c_in * c_out
    return full if kind.name == "gst_large" else full / 2


@dataclass
class CostRow:
    layer: str
    kind: str
    params: int
    params_formula: int
    macs: int


@dataclass
class CostReport:
    rows: list[CostRow]
    input_shape: tuple[int, ...]
    network: dict = field(default_factory=dict)
    flop_convention: str = FLOP_CONVENTION

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_params_formula(self) -> int:
        return sum(r.params_formula for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def gflops(self) -> float:
        return self.total_macs / 1e9

    def mismatches(self) -> list[CostRow]:
        return [r for r in self.rows if r.params != r.params_formula]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "network": self.network,
            "input_shape": list(self.input_shape),
            "flop_convention": self.flop_convention,
            "total_params": self.total_params,
            "total_params_formula": self.total_params_formula,
            "total_macs": self.total_macs,
            "gflops": self.gflops,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.layer, r.kind, r.params, r.params_formula, r.macs])
        w.writerow(["total", "", self.total_params, self.total_params_formula, self.total_macs])
        return buf.getvalue()


def conv_macs(spec: ConvSpec, input_shape: Sequence[int]) -> int:
    """Output elements times the per-output multiply-accumulates."""
    out = spec.output_shape(tuple(input_shape))
    return math.prod(out) * (spec.in_channels // spec.groups) * math.prod(spec.kernel)


def _conv_macs(conv: Conv, out_shape) -> int:
    s = conv.spec
    return math.prod(out_shape) * (s.in_channels // s.groups) * math.prod(s.kernel)


def _conv_formula(conv: Conv) -> int:
    s = conv.spec
    return s.in_channels * s.out_channels // s.groups * math.prod(s.kernel) + (s.out_channels if s.bias else 0)


def cost_report(net: Network, input_shape: Sequence[int] | None = None) -> CostReport:
    """Per-layer parameter and MAC rows for one clip of `input_shape`.

    `input_shape` may be (N, C, T, H, W) or (T, H, W); it defaults to the
    network spec's clip with N = 1.
    """
    if input_shape is None:
        shape = net.spec.input_shape
    elif len(input_shape) == 3:
        shape = (1, net.spec.in_channels, *input_shape)
    else:
        shape = tuple(input_shape)
    rows: list[CostRow] = []
    unit_rows: dict[int, CostRow] = {}
    for rec in net.trace(shape):
        m, unit = rec.module, rec.unit
        if isinstance(m, Conv) and isinstance(unit, SpatioTemporalUnit):
            row = unit_rows.get(id(unit))
            if row is None:
                formula = block_params_closed_form(unit.block, unit.c_in, unit.c_out)
                row = CostRow(unit.name, unit.block.label, 0, formula, 0)
                unit_rows[id(unit)] = row
                rows.append(row)
            row.params += sum(v.size for _, v, _ in m.own_parameters())
            row.macs += _conv_macs(m, rec.out_shape)
        elif isinstance(m, Conv):
            n = sum(v.size for _, v, _ in m.own_parameters())
            rows.append(CostRow(m.name, "conv", n, _conv_formula(m), _conv_macs(m, rec.out_shape)))
        elif isinstance(m, BatchNorm):
            n = sum(v.size for _, v, _ in m.own_parameters())
            rows.append(CostRow(m.name, "bn", n, 2 * m.layer.channels, 0))
        elif isinstance(m, Head):
            k, c = m.fc.weight.shape
            n = sum(v.size for _, v, _ in m.own_parameters())
            frames = rec.out_shape[0] * rec.out_shape[1]
            rows.append(CostRow(f"{m.name}.fc", "linear", n, c * k + k, frames * c * k))
    return CostReport(rows, tuple(shape), net.spec.to_dict())


def count_params(net: Network) -> CostReport:
    """Learned parameters (conv weights, BN scale/shift, classifier); running statistics excluded."""
    return cost_report(net)


def count_macs(net: Network, input_shape: Sequence[int]) -> CostReport:
    return cost_report(net, input_shape)


@dataclass
class CompareRow:
    block: str
    backbone: str
    params: int
    params_m: float
    macs: int
    gflops: float


def compare(specs: Sequence[NetworkSpec], input_shape: Sequence[int] | None = None) -> list[CompareRow]:
    """One row per spec, in the given order."""
    if not specs:
        raise ValueError("need at least one network spec")
    out = []
    for spec in specs:
        rep = cost_report(make_network(spec), input_shape)
        out.append(CompareRow(spec.block.label, spec.backbone, rep.total_params,
                              round(rep.total_params / 1e6, 3), rep.total_macs, round(rep.gflops, 3)))
    return out


def compare_to_csv(rows: Sequence[CompareRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "backbone", "params", "params_m", "macs", "gflops"])
    for r in rows:
        w.writerow([r.block, r.backbone, r.params, r.params_m, r.macs, r.gflops])
    return buf.getvalue()


def compare_to_json(rows: Sequence[CompareRow]) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, "rows": [asdict(r) for r in rows]}, indent=2) + "\n"
