"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 numerical failure (a failed
gradient check or a non-finite training loss).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis, cost_model
from .blocks import BlockKind, NetworkSpec, make_block, make_network, tiny_spec, to_fraction
from .tensor_core import NonFiniteError, finite_diff_check, softmax_cross_entropy
from .training import (CheckpointError, SyntheticSpec, TrainConfig, default_output_dir, evaluate, gather_frames,
                       gen_synthetic, load_checkpoint, save_checkpoint, train)

SCHEMA_VERSION = 1
BLOCK_CHOICES = ("c2d", "c3d", "c3d-group", "p3d", "gst", "gst-large")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fraction(text: str) -> Fraction:
    try:
        return to_fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from e


def block_from_args(args) -> BlockKind:
    name = args.block.replace("-", "_")
    beta = getattr(args, "beta", None)
    if name in ("gst", "gst_large"):
        if beta is not None:
            if beta not in (Fraction(1), Fraction(1, 2)):
                raise UsageError("--beta must be 1 or 1/2")
            name = "gst_large" if beta == 1 else "gst"
        return BlockKind(name, alpha=args.alpha if args.alpha is not None else Fraction(1, 4),
                         temporal_kernel=args.temporal_kernel)
    if args.alpha is not None or beta is not None:
        raise UsageError(f"--alpha/--beta only apply to gst blocks, not {args.block}")
    if name == "c3d_group":
        return BlockKind.c3d_group(args.groups, temporal_kernel=args.temporal_kernel)
    if args.groups != 2:
        raise UsageError("--groups only applies to c3d-group")
    return BlockKind(name, temporal_kernel=args.temporal_kernel)


def _add_block_flags(p, default="gst"):
    p.add_argument("--block", choices=BLOCK_CHOICES, default=default)
    p.add_argument("--alpha", type=_fraction, default=None, help="temporal output-channel share, e.g. 0.25 or 1/4")
    p.add_argument("--beta", type=_fraction, default=None, help="input-channel share per path: 1 or 1/2")
    p.add_argument("--groups", type=int, default=2, help="groups for c3d-group")
    p.add_argument("--temporal-kernel", type=int, default=3)


def _add_network_flags(p):
    p.add_argument("--backbone", choices=("resnet18", "resnet50"), default="resnet50")
    p.add_argument("--classes", type=int, default=174)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=224, help="input height and width")


def _add_output_flags(p, formats=("json", "csv")):
    p.add_argument("--format", choices=formats, default=formats[0])
    p.add_argument("--output", "-o", type=Path, default=None, help="file to write; standard output if omitted")


def _network_spec(args, block: BlockKind) -> NetworkSpec:
    return NetworkSpec(backbone=args.backbone, block=block, num_classes=args.classes,
                       frames=args.frames, height=args.size, width=args.size, seed=args.seed)


def _emit(text: str, path: Path | None):
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _report_text(rep: cost_model.CostReport, fmt: str) -> str:
    return rep.to_csv() if fmt == "csv" else rep.to_json()


def cmd_count(args) -> int:
    net = make_network(_network_spec(args, block_from_args(args)))
    _emit(_report_text(cost_model.count_params(net), args.format), args.output)
    return 0


def cmd_flops(args) -> int:
    net = make_network(_network_spec(args, block_from_args(args)))
    _emit(_report_text(cost_model.count_macs(net, (args.frames, args.size, args.size)), args.format), args.output)
    return 0


def cmd_compare(args) -> int:
    try:
        kinds = [BlockKind.parse(b) for b in args.blocks.split(",") if b.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from e
    specs = [_network_spec(args, k) for k in kinds]
    rows = cost_model.compare(specs, (args.frames, args.size, args.size))
    _emit(cost_model.compare_to_csv(rows) if args.format == "csv" else cost_model.compare_to_json(rows), args.output)
    return 0


def gradcheck_network(block: BlockKind, seed: int = 0, blocks: int = 5, entries: int = 12,
                      tol: float = 1e-4, step: float = 1e-5):
    """Finite-difference spot checks on a truncated 2-stage network with a 1x16x4x8x8 input
    and on a standalone block; returns the list of reports."""
    rng = np.random.default_rng(seed)
    reports = []

    # standalone block, every parameter entry
    unit = make_block(block, 8, 8, 1, rng, "unit")
    x = rng.standard_normal((1, 8, 4, 6, 6))
    proj = rng.standard_normal(unit.trace((1, 8, 4, 6, 6), [])[1:])

    def unit_loss():
        return float(np.sum(unit.forward(x, train=True) * proj))

    unit.zero_grad()
    unit.forward(x, train=True)
    unit.backward(np.broadcast_to(proj, (1, *proj.shape)).copy())
    params = {n: v for n, v, _ in unit.parameters()}
    grads = {n: g.copy() for n, _, g in unit.parameters()}
    reports += finite_diff_check(unit_loss, params, grads, tol, step, max_entries=4 * entries, rng=rng)

    # truncated network, sampled parameter blocks
    spec = tiny_spec(block, in_channels=16, frames=4, height=8, width=8, num_classes=5, dropout=0.0, seed=seed)
    net = make_network(spec, rng)
    x = rng.standard_normal(spec.input_shape)
    labels = np.array([int(rng.integers(spec.num_classes))])

    def net_loss():
        return softmax_cross_entropy(net.forward(x, "train")[0], labels)[0]

    net.zero_grad()
    logits, _ = net.forward(x, "train")
    net.backward(softmax_cross_entropy(logits, labels)[1])
    names = [n for n, _, _ in net.parameters()]
    picked = sorted(rng.choice(len(names), size=min(blocks, len(names)), replace=False))
    params = {names[i]: net.param_dict()[names[i]] for i in picked}
    grads = {n: net.grad_dict()[n].copy() for n in params}
    reports += finite_diff_check(net_loss, params, grads, tol, step, max_entries=entries, rng=rng)
    return reports


def cmd_gradcheck(args) -> int:
    block = block_from_args(args)
    reports = gradcheck_network(block, args.seed, args.param_blocks, args.entries, args.tol, args.step)
    ok = all(r.passed for r in reports)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "block": block.label,
        "seed": args.seed,
        "tolerance": args.tol,
        "step": args.step,
        "passed": ok,
        "checks": [{"name": r.name, "max_abs_error": r.max_abs_error, "max_rel_error": r.max_rel_error,
                    "checked": r.checked, "passed": r.passed} for r in reports],
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.output)
    return 0 if ok else 2


def _history_text(hist, fmt: str, timing: bool) -> str:
    rows = hist.rows(timing)
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, "epochs": rows}, indent=2) + "\n"
    buf = io.StringIO()
    fields = ["epoch", "train_loss", "train_acc", "eval_acc"] + (["seconds"] if timing else [])
    w = csv.DictWriter(buf, fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _synthetic_pair(args):
    base = SyntheticSpec(samples_per_class=args.samples_per_class, noise=args.noise, seed=args.seed)
    return gen_synthetic(base), gen_synthetic(replace(base, seed=args.seed + 1000))


def cmd_train(args) -> int:
    block = block_from_args(args)
    train_set, eval_set = _synthetic_pair(args)
    net = make_network(tiny_spec(block, seed=args.seed, frames=args.segments))
    cfg = TrainConfig(batch_size=args.batch_size, lr=args.lr, epochs=args.epochs, segments=args.segments,
                      seed=args.seed, milestones=tuple(args.milestones), dropout=args.dropout)
    net, hist = train(net, train_set, cfg, eval_set)
    acc, per_class = evaluate(net, eval_set, cfg.segments)
    ckpt = args.checkpoint or default_output_dir() / f"{block.label.replace(':', '_').replace('/', '-')}_seed{args.seed}"
    save_checkpoint(net, ckpt)
    _emit(_history_text(hist, args.format, args.timing), args.output)
    summary = {"eval_accuracy": acc, "per_class": per_class, "checkpoint": str(ckpt)}
    print(json.dumps(summary), file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    if not (args.checkpoint / "manifest.json").exists():
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 1
    net = load_checkpoint(args.checkpoint)
    doc = {"schema_version": SCHEMA_VERSION, "checkpoint": str(args.checkpoint)}
    try:
        attrs = analysis.extract_bn_attribution(net)
    except ValueError:
        attrs = []
    doc["bn_attribution"] = json.loads(analysis.attribution_to_json(attrs)) if attrs else None
    ds = gen_synthetic(SyntheticSpec(samples_per_class=1, noise=args.noise, seed=args.seed))
    clip = gather_frames(ds.clips[args.clip_index % len(ds)][None], net.spec.frames, "eval")
    trace = analysis.per_frame_trace(net, clip, min(args.top_k, net.spec.num_classes))
    doc["clip_label"] = ds.class_names[int(ds.labels[args.clip_index % len(ds)])]
    doc["trace"] = trace.to_dict(list(ds.class_names))
    doc["shuffle_sensitivity"] = analysis.shuffle_sensitivity(
        net, clip, args.trials, np.random.default_rng(args.seed))
    _emit(json.dumps(doc, indent=2) + "\n", args.output)
    if args.histogram_csv is not None and attrs:
        _emit(analysis.histograms_to_csv(attrs), args.histogram_csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gstconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, help_ in [("count", cmd_count, "parameter report"), ("flops", cmd_flops, "MAC report")]:
        s = sub.add_parser(name, help=help_)
        _add_block_flags(s)
        _add_network_flags(s)
        _add_output_flags(s)
        s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=fn)

    s = sub.add_parser("compare", help="params and GFLOPs for several block kinds")
    s.add_argument("--blocks", default="c3d,c3d-group:2,p3d,gst-large:1/4,c2d,gst:1/2,gst:1/4,gst:1/8")
    _add_network_flags(s)
    _add_output_flags(s, ("csv", "json"))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_block_flags(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--param-blocks", type=int, default=5)
    s.add_argument("--entries", type=int, default=12, help="entries sampled per network parameter block")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--output", "-o", type=Path, default=None)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train", help="train a tiny network on the synthetic task")
    _add_block_flags(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--milestones", type=int, nargs="*", default=[15, 25])
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--dropout", type=float, default=0.3)
    s.add_argument("--segments", type=int, default=8)
    s.add_argument("--samples-per-class", type=int, default=48)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--checkpoint", type=Path, default=None,
                   help="checkpoint directory (default: $GSTCONV_OUTPUT_DIR or ./runs)")
    s.add_argument("--timing", action="store_true", help="include wall-clock seconds in the history")
    _add_output_flags(s, ("csv", "json"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("analyze", help="BN attribution, per-frame trace and shuffle probe")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--clip-index", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--trials", type=int, default=8)
    s.add_argument("--histogram-csv", type=Path, default=None)
    s.add_argument("--output", "-o", type=Path, default=None)
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NonFiniteError as e:
        print(f"gstconv: numerical failure: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"gstconv: bad checkpoint: {e}", file=sys.stderr)
        return 1
    except (UsageError, ValueError) as e:
        print(f"gstconv: error: {e}", file=sys.stderr)
        return 1

if __name__ == "__main__":
    sys.exit(main())
