"""
Block families and what they cost
==================================

Build one block of each kind on 64 -> 64 channels, count its weights, and
compare with the closed forms.  Then scale up to ResNet-50 and print the
parameter / GMAC table for an 8-frame 224x224 clip.
"""
from gstconv.blocks import BlockKind, NetworkSpec, make_block
from gstconv.cost_model import block_params_closed_form, compare

kinds = ["c2d", "c3d", "c3d-group:2", "p3d", "gst-large:1/4", "gst:1/2", "gst:1/4", "gst:1/8"]

print(f"{'block':>14}  {'weights':>8}  {'formula':>8}")
for label in kinds:
    kind = BlockKind.parse(label)
    unit = make_block(kind, 64, 64)
    print(f"{label:>14}  {unit.weight_count():>8}  {block_params_closed_form(kind, 64, 64):>8}")

# the grouped spatial-temporal block splits output channels: spatial first, temporal second
gst = make_block(BlockKind.gst("1/4"), 64, 64)
print("\nspatial channels", gst.spatial_channels, "temporal channels", gst.temporal_channels)

# whole networks (this allocates the weights, a few seconds per row)
rows = compare([NetworkSpec(block=BlockKind.parse(k)) for k in kinds], (8, 224, 224))
print(f"\n{'block':>14}  {'params (M)':>10}  {'GMACs':>7}")
for r in rows:
    print(f"{r.block:>14}  {r.params_m:>10.3f}  {r.gflops:>7.2f}")
