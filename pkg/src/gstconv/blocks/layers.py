"""Layer graph nodes with cached forward state and manual backward passes.

Leaves (Conv, BatchNorm, ReLU, MaxPool) wrap the kernels in
`gstconv.tensor_core`.  Composite nodes route gradients between them.
A node only caches its input when called with ``train=True``; calling
``backward`` after an eval-mode forward is an error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .. import tensor_core as tc


@dataclass
class TraceRecord:
    """One leaf visited during shape propagation."""

    module: "Module"
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    unit: "Module | None" = None


class Module:
    kind = "module"

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def children(self) -> list["Module"]:
        return []

    def own_parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        return iter(())

    def own_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def modules(self) -> Iterator["Module"]:
        yield self
        for c in self.children():
            yield from c.modules()

    def leaves(self) -> Iterator["Module"]:
        kids = self.children()
        if not kids:
            yield self
        for c in kids:
            yield from c.leaves()

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """(name, value, grad) triples in a fixed depth-first order."""
        for m in self.modules():
            yield from m.own_parameters()

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for m in self.modules():
            yield from m.own_buffers()

    def zero_grad(self):
        for _, _, g in self.parameters():
            g[...] = 0.0

    def _saved(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a train-mode forward")
        return self._cache

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def trace(self, shape, records: list[TraceRecord], unit=None):
        raise NotImplementedError


class Conv(Module):
    kind = "conv"

    def __init__(self, name: str, spec: tc.ConvSpec, rng: np.random.Generator, path: str = "shared"):
        super().__init__(name)
        self.layer = tc.ConvLayer.create(spec, rng)
        self.path = path

    @property
    def spec(self) -> tc.ConvSpec:
        return self.layer.spec

    def own_parameters(self):
        yield f"{self.name}.weight", self.layer.weight, self.layer.grad_weight
        if self.layer.bias is not None:
            yield f"{self.name}.bias", self.layer.bias, self.layer.grad_bias

    def forward(self, x, train=False):
        self._cache = x if train else None
        return tc.conv_forward(x, self.layer)

    def backward(self, grad):
        gx, _, _ = tc.conv_backward(self._saved(), self.layer, grad)
        return gx

    def trace(self, shape, records, unit=None):
        out = self.spec.output_shape(shape)
        records.append(TraceRecord(self, tuple(shape), out, unit))
        return out


class BatchNorm(Module):
    kind = "bn"

    def __init__(self, name: str, channels: int, path: str = "shared"):
        super().__init__(name)
        self.layer = tc.BnLayer(channels)
        self.path = path

    def own_parameters(self):
        yield f"{self.name}.gamma", self.layer.gamma, self.layer.grad_gamma
        yield f"{self.name}.beta", self.layer.beta, self.layer.grad_beta

    def own_buffers(self):
        yield f"{self.name}.running_mean", self.layer.running_mean
        yield f"{self.name}.running_var", self.layer.running_var

    def forward(self, x, train=False):
        self._cache = x if train else None
        return tc.bn_forward(x, self.layer, "train" if train else "eval")

    def backward(self, grad):
        gx, _, _ = tc.bn_backward(self._saved(), self.layer, grad, "train")
        return gx

    def trace(self, shape, records, unit=None):
        if shape[1] != self.layer.channels:
            raise tc.ShapeError(f"{self.name}: {shape[1]} channels, expected {self.layer.channels}")
        records.append(TraceRecord(self, tuple(shape), tuple(shape), unit))
        return tuple(shape)


class ReLU(Module):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache = x if train else None
        return tc.relu(x)

    def backward(self, grad):
        return tc.relu_backward(self._saved(), grad)

    def trace(self, shape, records, unit=None):
        records.append(TraceRecord(self, tuple(shape), tuple(shape), unit))
        return tuple(shape)


class MaxPool(Module):
    """3x3 stride-2 spatial max pool applied frame by frame."""

    kind = "maxpool"

    def __init__(self, name: str, kernel: int = 3, stride: int = 2, padding: int = 1):
        super().__init__(name)
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x, train=False):
        self._cache = x if train else None
        return tc.max_pool_spatial(x, self.kernel, self.stride, self.padding)

    def backward(self, grad):
        return tc.max_pool_spatial_backward(self._saved(), grad, self.kernel, self.stride, self.padding)

    def trace(self, shape, records, unit=None):
        n, c, t, h, w = shape
        k, s, p = self.kernel, self.stride, self.padding
        out = (n, c, t, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
        records.append(TraceRecord(self, tuple(shape), out, unit))
        return out


class Sequential(Module):
    kind = "sequential"

    def __init__(self, name: str, layers: list[Module]):
        super().__init__(name)
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x, train=False):
        for m in self.layers:
            x = m.forward(x, train)
        return x

    def backward(self, grad):
        for m in reversed(self.layers):
            grad = m.backward(grad)
        return grad

    def trace(self, shape, records, unit=None):
        for m in self.layers:
            shape = m.trace(shape, records, unit)
        return shape


class ParallelConcat(Module):
    """Spatial and temporal convs on (possibly different) input channel
    slices, outputs concatenated spatial-first along the channel axis."""

    kind = "parallel"

    def __init__(self, name: str, spatial: Conv, temporal: Conv, spatial_in: slice, temporal_in: slice):
        super().__init__(name)
        self.spatial, self.temporal = spatial, temporal
        self.spatial_in, self.temporal_in = spatial_in, temporal_in

    def children(self):
        return [self.spatial, self.temporal]

    def forward(self, x, train=False):
        self._cache = x.shape if train else None
        ys = self.spatial.forward(x[:, self.spatial_in], train)
        yt = self.temporal.forward(x[:, self.temporal_in], train)
        return np.concatenate([ys, yt], axis=1)

    def backward(self, grad):
        shape = self._saved()
        cs = self.spatial.spec.out_channels
        gx = np.zeros(shape)
        gx[:, self.spatial_in] += self.spatial.backward(grad[:, :cs])
        gx[:, self.temporal_in] += self.temporal.backward(grad[:, cs:])
        return gx

    def trace(self, shape, records, unit=None):
        n, c, *rest = shape
        s_in = (n, len(range(c)[self.spatial_in]), *rest)
        t_in = (n, len(range(c)[self.temporal_in]), *rest)
        ys = self.spatial.trace(s_in, records, unit)
        yt = self.temporal.trace(t_in, records, unit)
        if ys[2:] != yt[2:]:
            raise tc.ShapeError("spatial and temporal paths disagree on output extent")
        return (n, ys[1] + yt[1], *ys[2:])


class Residual(Module):
    """relu(body(x) + shortcut(x)); the shortcut is the identity when None."""

    kind = "residual"

    def __init__(self, name: str, body: Module, shortcut: Module | None):
        super().__init__(name)
        self.body, self.shortcut = body, shortcut
        self.relu = ReLU(f"{name}.relu_out")

    def children(self):
        kids = [self.body]
        if self.shortcut is not None:
            kids.append(self.shortcut)
        return kids + [self.relu]

    def forward(self, x, train=False):
        y = self.body.forward(x, train)
        y = y + (x if self.shortcut is None else self.shortcut.forward(x, train))
        return self.relu.forward(y, train)

    def backward(self, grad):
        g = self.relu.backward(grad)
        gx = self.body.backward(g)
        return gx + (g if self.shortcut is None else self.shortcut.backward(g))

    def trace(self, shape, records, unit=None):
        out = self.body.trace(shape, records, unit)
        sc = shape if self.shortcut is None else self.shortcut.trace(shape, records, unit)
        if tuple(sc) != tuple(out):
            raise tc.ShapeError(f"{self.name}: shortcut {sc} vs body {out}")
        return self.relu.trace(out, records, unit)


class Head(Module):
    """Per-frame spatial average pool, dropout, shared linear classifier,
    then the mean of the per-frame logits over time."""

    kind = "head"

    def __init__(self, name: str, in_features: int, num_classes: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__(name)
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.fc = tc.LinearLayer.create(in_features, num_classes, rng)
        self.dropout = dropout

    def own_parameters(self):
        yield f"{self.name}.fc.weight", self.fc.weight, self.fc.grad_weight
        yield f"{self.name}.fc.bias", self.fc.bias, self.fc.grad_bias

    def features(self, x):
        return tc.global_avg_pool_spatial(x)[:, :, :, 0, 0].transpose(0, 2, 1)  # (N, T, C)

    def forward(self, x, train=False, rng: np.random.Generator | None = None):
        feats = self.features(x)
        mask = None
        if train and self.dropout > 0.0:
            rng = rng or np.random.default_rng()
            mask = (rng.random(feats.shape) >= self.dropout) / (1.0 - self.dropout)
            feats = feats * mask
        per_frame = tc.linear_forward(feats, self.fc)
        self._cache = (x.shape, feats, mask) if train else None
        return tc.frame_mean(per_frame), per_frame

    def backward(self, grad_logits, grad_per_frame=None):
        x_shape, feats, mask = self._saved()
        t = feats.shape[1]
        g = np.repeat(grad_logits[:, None, :] / t, t, axis=1)
        if grad_per_frame is not None:
            g = g + grad_per_frame
        gf, _, _ = tc.linear_backward(feats, self.fc, g)
        if mask is not None:
            gf = gf * mask
        pooled = gf.transpose(0, 2, 1)[:, :, :, None, None]
        return tc.global_avg_pool_spatial_backward(x_shape, pooled)

    def trace(self, shape, records, unit=None):
        n, c, t, _, _ = shape
        if c != self.fc.weight.shape[1]:
            raise tc.ShapeError(f"head expects {self.fc.weight.shape[1]} channels, got {c}")
        out = (n, t, self.fc.weight.shape[0])
        records.append(TraceRecord(self, tuple(shape), out, unit))
        return out
