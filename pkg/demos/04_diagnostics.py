"""
Looking inside a trained network
================================

Train a small grouped spatial-temporal network (shortened schedule), then:

* split the |gamma| of the batch norm after each block into spatial and
  temporal channel groups,
* print the per-frame predictions before temporal averaging,
* measure how much the logits move when frames are shuffled.
"""
import numpy as np

from gstconv.analysis import extract_bn_attribution, per_frame_trace, shuffle_sensitivity, stage_summary
from gstconv.blocks import BlockKind, make_network, tiny_spec
from gstconv.training import SyntheticSpec, TrainConfig, gen_synthetic, train

data = gen_synthetic(SyntheticSpec(samples_per_class=32, seed=1))
net = make_network(tiny_spec(BlockKind.gst("1/4")))
net, _ = train(net, data, TrainConfig(epochs=12, milestones=(8,)))

for a in extract_bn_attribution(net):
    print(f"{a.block:>20}  spatial mean {a.spatial_mean:.3f}  temporal mean {a.temporal_mean:.3f}")
print("per stage", stage_summary(extract_bn_attribution(net)))

clip = data.clips[data.labels == 1][:1]  # right_to_left
trace = per_frame_trace(net, clip, k=2)
for t, (cls, p) in enumerate(zip(trace.frame_classes, trace.frame_scores)):
    print(f"frame {t}: {[data.class_names[c] for c in cls]} {np.round(p, 3)}")
print("clip prediction:", data.class_names[trace.prediction])

print("shuffle sensitivity (GST):", shuffle_sensitivity(net, clip, trials=8))
c2d = make_network(tiny_spec(BlockKind.c2d()))
print("shuffle sensitivity (C2D):", shuffle_sensitivity(c2d, clip, trials=8))
