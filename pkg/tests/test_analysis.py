import csv
import io
import json

import numpy as np
import pytest

from gstconv.analysis import (
    attribution_to_json,
    extract_bn_attribution,
    histograms_to_csv,
    per_frame_trace,
    shuffle_sensitivity,
    stage_summary,
)
from gstconv.blocks import BlockKind, NetworkSpec, make_network, tiny_spec
from gstconv.tensor_core import frame_mean, softmax


@pytest.fixture(scope="module")
def gst_net():
    return make_network(tiny_spec(BlockKind.gst("1/4")))


def test_fresh_bn_gives_identical_single_bin_histograms(gst_net):
    for a in extract_bn_attribution(gst_net):
        assert np.array_equal(a.spatial_hist / a.spatial.size, a.temporal_hist / a.temporal.size)
        assert np.count_nonzero(a.spatial_hist) == 1 == np.count_nonzero(a.temporal_hist)
        assert len(a.bin_edges) == 21 and a.bin_edges[0] == 0.0


def test_constructed_gammas():
    net = make_network(tiny_spec(BlockKind.gst("1/4")))
    for u in net.units():
        g = u.bn.layer.gamma
        g[u.spatial_channels.start:u.spatial_channels.stop] = -0.5
        g[u.temporal_channels.start:u.temporal_channels.stop] = 2.0
    for a in extract_bn_attribution(net):
        assert a.spatial_mean == 0.5 and a.temporal_mean == 2.0
        assert a.spatial_median == 0.5 and a.temporal_median == 2.0
    assert all(v == {"spatial_mean": 0.5, "temporal_mean": 2.0} for v in stage_summary(extract_bn_attribution(net)).values())


@pytest.mark.parametrize("kind", [BlockKind.gst("1/4"), BlockKind.gst("1/8"), BlockKind.gst_large("1/4"),
                                  BlockKind.gst("1/2")], ids=lambda k: k.label)
@pytest.mark.parametrize("backbone", ["resnet18", "resnet50"])
def test_partition_matches_constructor_ranges(kind, backbone):
    net = make_network(NetworkSpec(backbone=backbone, block=kind, height=32, width=32, frames=2))
    attrs = extract_bn_attribution(net)
    assert len(attrs) == len(net.units())
    for a, u in zip(attrs, net.units()):
        assert a.spatial.size + a.temporal.size == u.bn.layer.channels
        assert a.spatial.size == u.body.spatial.spec.out_channels == len(u.spatial_channels)
        assert a.temporal.size == u.body.temporal.spec.out_channels == len(u.temporal_channels)
        assert u.spatial_channels.start == 0 and u.temporal_channels.stop == u.c_out


def test_attribution_requires_gst():
    with pytest.raises(ValueError):
        extract_bn_attribution(make_network(tiny_spec(BlockKind.c2d())))


def test_attribution_serialisation(gst_net):
    attrs = extract_bn_attribution(gst_net)
    doc = json.loads(attribution_to_json(attrs))
    assert doc["schema_version"] == 1 and len(doc["blocks"]) == len(attrs)
    assert set(doc["stages"]) == {"1", "2"}
    rows = list(csv.reader(io.StringIO(histograms_to_csv(attrs))))
    assert rows[0] == ["block", "bin_left", "bin_right", "spatial_count", "temporal_count"]
    assert len(rows) == 1 + 20 * len(attrs)
    assert attribution_to_json(attrs) == attribution_to_json(extract_bn_attribution(gst_net))


def test_trace_on_constant_clip():
    # exact for k_t = 1 networks; temporal zero padding lets GST edge frames differ
    tr = per_frame_trace(make_network(tiny_spec(BlockKind.c2d())), np.ones((1, 1, 8, 32, 32)), k=2)
    assert np.all(tr.frame_classes == tr.frame_classes[0])
    assert np.all(tr.frame_scores == tr.frame_scores[0])


def test_trace_full_k_scores_sum_to_one(gst_net):
    clip = np.random.default_rng(0).standard_normal((1, 1, 8, 32, 32))
    tr = per_frame_trace(gst_net, clip, k=4)
    assert np.all(np.abs(tr.frame_scores.sum(axis=1) - 1) <= 1e-9)
    assert np.all(np.diff(tr.frame_scores, axis=1) <= 0)
    assert np.all((tr.frame_scores >= 0) & (tr.frame_scores <= 1))
    np.testing.assert_array_equal(tr.logits, frame_mean(tr.per_frame_logits[None])[0])
    np.testing.assert_array_equal(tr.final_scores, np.sort(softmax(tr.logits))[::-1])
    d = tr.to_dict(["a", "b", "c", "d"])
    assert len(d["frames"]) == 8 and d["final"]["classes"][0] in "abcd"


def test_trace_rejects_bad_k(gst_net):
    with pytest.raises(ValueError):
        per_frame_trace(gst_net, np.zeros((1, 1, 8, 32, 32)), k=5)
    with pytest.raises(ValueError):
        per_frame_trace(gst_net, np.zeros((2, 1, 8, 32, 32)), k=1)


def test_shuffle_c2d_is_exactly_zero():
    net = make_network(tiny_spec(BlockKind.c2d()))
    rng = np.random.default_rng(0)
    for _ in range(3):
        clip = rng.standard_normal((1, 1, 8, 32, 32))
        assert shuffle_sensitivity(net, clip, trials=6, rng=rng) == 0.0


def test_shuffle_unit_temporal_kernel_network_is_zero():
    net = make_network(tiny_spec(BlockKind.gst("1/4", temporal_kernel=1)))
    clip = np.random.default_rng(1).standard_normal((1, 1, 8, 32, 32))
    assert shuffle_sensitivity(net, clip, trials=6) == 0.0


def test_shuffle_identity_permutation_is_zero(gst_net):
    clip = np.random.default_rng(2).standard_normal((1, 1, 8, 32, 32))
    assert shuffle_sensitivity(gst_net, clip, permutations=[np.arange(8)]) == 0.0
    assert shuffle_sensitivity(gst_net, clip, trials=4) > 1e-6


def test_shuffle_needs_two_frames(gst_net):
    with pytest.raises(ValueError):
        shuffle_sensitivity(gst_net, np.zeros((1, 1, 1, 32, 32)))


@pytest.mark.slow
def test_trained_gst_diagnostics(trained_gst, synthetic_sets):
    net, _ = trained_gst
    _, ev = synthetic_sets
    clip = ev.clips[ev.labels == 0][:1]
    assert per_frame_trace(net, clip, 1).prediction == 0
    order_clip = ev.clips[ev.labels == 1][:1]
    assert shuffle_sensitivity(net, order_clip, trials=4) > 1e-6
    summary = stage_summary(extract_bn_attribution(net))
    assert set(summary) == {1, 2}
