"""
Checking the backward passes
============================

Every layer has a hand-written backward.  Here a central-difference check
compares them with numerical derivatives, first on a single grouped conv,
then on a full grouped spatial-temporal block, and finally a corrupted
gradient to show the check does catch mistakes.
"""
import numpy as np

from gstconv import tensor_core as tc
from gstconv.blocks import GstConfig, make_gst_block

rng = np.random.default_rng(0)

# a strided, padded, grouped 3D conv
layer = tc.ConvLayer.create(tc.ConvSpec(4, 6, (3, 3, 3), (1, 2, 2), 1, groups=2), rng)
x = rng.standard_normal((1, 4, 3, 6, 6))
proj = rng.standard_normal(tc.conv_forward(x, layer).shape)
gx, gw, _ = tc.conv_backward(x, layer, proj)
f = lambda: float(np.sum(tc.conv_forward(x, layer) * proj))
for r in tc.finite_diff_check(f, {"input": x, "weight": layer.weight}, {"input": gx, "weight": gw}):
    print(r)

# a whole block: two parallel paths, concatenation, batch norm
unit = make_gst_block(8, 8, GstConfig("1/4", "1/2"), rng=rng)
xb = rng.standard_normal((1, 8, 4, 6, 6))
pb = rng.standard_normal((1, 8, 4, 6, 6))
unit.forward(xb, train=True)
unit.backward(pb)
params = {n: v for n, v, _ in unit.parameters()}
grads = {n: g.copy() for n, _, g in unit.parameters()}
for r in tc.finite_diff_check(lambda: float(np.sum(unit.forward(xb, True) * pb)), params, grads):
    print(r)

# negative control
bad = tc.finite_diff_check(f, {"weight": layer.weight}, {"weight": gw * 1.01})[0]
print("\ncorrupted gradient passes?", bad.passed, "rel error", bad.max_rel_error)
