from fractions import Fraction

import numpy as np
import pytest

from gstconv import tensor_core as tc
from gstconv.blocks import (
    BlockKind,
    GstConfig,
    NetworkSpec,
    make_block,
    make_gst_block,
    make_network,
    tiny_spec,
)
from gstconv.blocks.units import SpatioTemporalUnit

ALL_KINDS = [BlockKind.c2d(), BlockKind.c3d(), BlockKind.c3d_group(2), BlockKind.p3d(),
             BlockKind.gst_large("1/4"), BlockKind.gst("1/4")]


def unit_output(unit, x):
    """Conv part of a unit, before its batch norm."""
    return unit.body.forward(x)


# -- GstConfig ---------------------------------------------------------------


def test_config_split_quarter():
    sp = GstConfig("1/4", "1/2").split(64, 64)
    assert (sp.out_spatial, sp.out_temporal, sp.in_spatial, sp.in_temporal) == (48, 16, 32, 32)
    assert sp.spatial_in == slice(0, 32) and sp.temporal_in == slice(32, 64)


def test_config_accepts_decimals_and_fractions():
    assert GstConfig(0.25, 0.5).alpha == Fraction(1, 4)
    assert GstConfig("1/8").alpha == Fraction(1, 8)


@pytest.mark.parametrize("alpha,beta", [(0, "1/2"), (Fraction(3, 2), 1), ("1/4", "1/3")])
def test_config_rejects_bad_fractions(alpha, beta):
    with pytest.raises(ValueError):
        GstConfig(alpha, beta)


def test_config_rejects_empty_path_and_odd_input():
    with pytest.raises(ValueError):
        GstConfig("1/8").split(8, 2)
    with pytest.raises(ValueError):
        GstConfig("1/4", "1/2").split(7, 8)


def test_block_kind_parse_and_label():
    for k in ALL_KINDS:
        assert BlockKind.parse(k.label) == k
        assert BlockKind.from_dict(k.to_dict()) == k
    assert BlockKind.parse("gst:0.125").alpha == Fraction(1, 8)
    with pytest.raises(ValueError):
        BlockKind.parse("conv4d")


# -- weight counts -----------------------------------------------------------


def test_gst_quarter_weight_count():
    unit = make_gst_block(64, 64, GstConfig("1/4", "1/2"))
    sizes = {c.path: c.layer.weight.size for c in unit.convs()}
    assert sizes == {"spatial": 13_824, "temporal": 13_824}
    assert unit.weight_count() == 27_648
    assert unit.weight_count() == (1 - Fraction(1, 4) + Fraction(3, 4)) * 9 * 64 * 64 / 2


def test_gst_half_matches_c2d():
    unit = make_gst_block(64, 64, GstConfig("1/2", "1/2"))
    assert (unit.split.out_spatial, unit.split.out_temporal) == (32, 32)
    assert unit.weight_count() == 36_864 == make_block(BlockKind.c2d(), 64, 64).weight_count()


@pytest.mark.parametrize("kind,count", [
    (BlockKind.p3d(), 49_152),
    (BlockKind.c3d_group(2), 55_296),
    (BlockKind.gst_large("1/4"), 55_296),
    (BlockKind.c3d(), 110_592),
    (BlockKind.c2d(), 36_864),
])
def test_block_weight_counts(kind, count):
    assert make_block(kind, 64, 64).weight_count() == count


def test_c3d_group_divisibility():
    with pytest.raises(ValueError):
        make_block(BlockKind.c3d_group(3), 64, 64)


# -- block semantics ---------------------------------------------------------


def test_gst_constant_in_time_input(rng):
    unit = make_gst_block(8, 8, GstConfig("1/4", "1/2"), rng=rng)
    frame = rng.standard_normal((1, 8, 1, 6, 6))
    x = np.repeat(frame, 5, axis=2)
    out = unit_output(unit, x)
    s = unit.spatial_channels
    t = unit.temporal_channels
    # spatial path: identical per frame
    for k in range(1, 5):
        assert np.array_equal(out[:, s.start:s.stop, k], out[:, s.start:s.stop, 0])
    # temporal path: interior frames see the temporally summed kernel
    temporal = unit.body.temporal.layer
    summed = tc.ConvLayer(tc.ConvSpec(4, 2, (1, 3, 3), 1, (0, 1, 1)),
                          temporal.weight.sum(axis=2, keepdims=True))
    expected = tc.conv_forward(frame[:, 4:], summed)
    for k in range(1, 4):
        np.testing.assert_allclose(out[:, t.start:t.stop, k:k + 1], expected, rtol=0, atol=1e-12)


def test_gst_output_channel_order(rng):
    unit = make_gst_block(8, 8, GstConfig("1/4", "1/2"), rng=rng)
    x = rng.standard_normal((1, 8, 3, 5, 5))
    out = unit_output(unit, x)
    sp = tc.conv_forward(x[:, :4], unit.body.spatial.layer)
    tp = tc.conv_forward(x[:, 4:], unit.body.temporal.layer)
    assert np.array_equal(out, np.concatenate([sp, tp], axis=1))


def test_gst_large_reads_all_channels(rng):
    unit = make_block(BlockKind.gst_large("1/4"), 6, 8, rng=rng)
    assert unit.body.spatial.spec.in_channels == unit.body.temporal.spec.in_channels == 6
    assert (unit.split.out_spatial, unit.split.out_temporal) == (6, 2)


def test_c3d_with_unit_temporal_kernel_equals_c2d(rng):
    c3d = make_block(BlockKind.c3d(temporal_kernel=1), 4, 6, rng=rng)
    c2d = make_block(BlockKind.c2d(), 4, 6, rng=np.random.default_rng(5))
    c2d.body.layer.weight[...] = c3d.body.layer.weight
    x = rng.standard_normal((2, 4, 3, 6, 6))
    assert np.array_equal(unit_output(c3d, x), unit_output(c2d, x))


def test_p3d_structure():
    unit = make_block(BlockKind.p3d(), 16, 32, stride=2)
    spatial, bn, relu, temporal = unit.body.layers
    assert spatial.spec.kernel == (1, 3, 3) and spatial.spec.stride == (1, 2, 2)
    assert temporal.spec.kernel == (3, 1, 1) and temporal.spec.in_channels == 32
    assert unit.weight_count() == 9 * 16 * 32 + 3 * 32 * 32


def test_gst_with_unit_temporal_kernel_is_equivariant(rng):
    unit = make_gst_block(8, 8, GstConfig("1/4", "1/2", temporal_kernel=1), rng=rng)
    x = rng.standard_normal((1, 8, 6, 5, 5))
    perm = rng.permutation(6)
    assert np.array_equal(unit.forward(x[:, :, perm]), unit.forward(x)[:, :, perm])


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.label)
def test_unit_backward_finite_differences(kind):
    # seed 3 puts one P3D pre-activation within a step of the ReLU kink
    rng = np.random.default_rng(7)
    unit = make_block(kind, 8, 8, rng=rng)
    x = rng.standard_normal((1, 8, 4, 6, 6))
    proj = rng.standard_normal(unit.forward(x, True).shape)
    unit.zero_grad()
    unit.forward(x, True)
    unit.backward(proj)
    params = {n: v for n, v, _ in unit.parameters()}
    grads = {n: g.copy() for n, _, g in unit.parameters()}
    reports = tc.finite_diff_check(lambda: float(np.sum(unit.forward(x, True) * proj)), params, grads)
    assert len(reports) >= 3
    assert all(r.passed for r in reports), [r for r in reports if not r.passed]


# -- networks ----------------------------------------------------------------


def _params(kind, **kw):
    net = make_network(NetworkSpec(block=kind, **kw))
    return sum(v.size for _, v, _ in net.parameters())


@pytest.mark.parametrize("kind,target", [
    (BlockKind.c2d(), 23.9e6),
    (BlockKind.gst("1/4"), 21.0e6),
    (BlockKind.gst_large("1/4"), 29.6e6),
])
def test_resnet50_param_totals(kind, target):
    assert abs(_params(kind) - target) <= 0.15e6


def test_parameter_names_unique_and_tagged():
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    names = [n for n, _, _ in net.parameters()]
    assert len(names) == len(set(names))
    assert "stage2.block0.st1.spatial.weight" in names
    for info in net.layers():
        if info.unit is not None and info.unit.split is not None and info.kind == "conv":
            spec = info.module.spec
            rng_ = info.unit.spatial_channels if info.path == "spatial" else info.unit.temporal_channels
            assert spec.out_channels == len(rng_)


def test_no_temporal_stride_anywhere():
    net = make_network(NetworkSpec(block=BlockKind.gst("1/4")))
    for m in net.modules():
        if hasattr(m, "spec") and isinstance(m.spec, tc.ConvSpec):
            assert m.spec.stride[0] == 1
    shapes = [r.out_shape for r in net.trace((1, 3, 8, 224, 224))]
    assert all(s[2] == 8 for s in shapes if len(s) == 5)


def test_forward_shapes_and_head_mean(rng):
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    x = rng.standard_normal((2, 1, 8, 32, 32))
    logits, per_frame = net.forward(x)
    assert logits.shape == (2, 4) and per_frame.shape == (2, 8, 4)
    np.testing.assert_allclose(logits, per_frame.mean(axis=1), rtol=1e-14)


def test_forward_single_frame(rng):
    net = make_network(tiny_spec(BlockKind.c2d(), frames=1))
    logits, per_frame = net.forward(rng.standard_normal((1, 1, 1, 32, 32)))
    assert np.array_equal(logits, per_frame[:, 0])


def test_forward_identical_frames_give_identical_per_frame_logits(rng):
    net = make_network(tiny_spec(BlockKind.c2d()))
    x = np.repeat(rng.standard_normal((1, 1, 1, 32, 32)), 8, axis=2)
    logits, per_frame = net.forward(x)
    assert np.all(per_frame == per_frame[:, :1])
    assert np.array_equal(logits, per_frame[:, 0])


def test_forward_rejects_channel_mismatch():
    net = make_network(tiny_spec(BlockKind.c2d()))
    with pytest.raises(tc.ShapeError):
        net.forward(np.zeros((1, 3, 8, 32, 32)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 1, 8, 32, 32)), mode="test")


def test_shuffled_frames_c2d_permutes_gst_differs(rng):
    c2d = make_network(tiny_spec(BlockKind.c2d()))
    gst = make_network(tiny_spec(BlockKind.gst("1/4")))
    x = rng.standard_normal((1, 1, 8, 32, 32))
    perm = np.array([3, 1, 7, 0, 2, 6, 5, 4])
    l0, pf0 = c2d.forward(x)
    l1, pf1 = c2d.forward(x[:, :, perm])
    assert np.array_equal(pf1, pf0[:, perm]) and np.array_equal(l0, l1)
    g0, _ = gst.forward(x)
    g1, _ = gst.forward(x[:, :, perm])
    assert np.max(np.abs(g0 - g1)) > 1e-6


def test_eval_forward_leaves_state_untouched(rng):
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    before = {n: b.copy() for n, b in net.buffers()}
    net.forward(rng.standard_normal((1, 1, 8, 32, 32)))
    assert all(np.array_equal(before[n], b) for n, b in net.buffers())


def test_units_are_the_replaced_convs():
    net = make_network(NetworkSpec(block=BlockKind.gst("1/4"), height=64, width=64))
    units = net.units()
    assert len(units) == 16 and all(isinstance(u, SpatioTemporalUnit) for u in units)
    assert [u.c_in for u in units[:3]] == [64, 64, 64]
