"""Float64 kernels for rank-5 video tensors laid out as (N, C, T, H, W).

Every forward kernel is a pure function of its inputs and the layer
parameters.  Backward kernels recompute what they need from the forward
input, return the gradients and also accumulate parameter gradients into
the layer's gradient slots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_tensor5(x) -> np.ndarray:
    """Return `x` as a contiguous float64 array of rank 5 with no empty axis."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 5:
        raise ShapeError(f"expected a rank-5 (N, C, T, H, W) tensor, got shape {a.shape}")
    if 0 in a.shape:
        raise ShapeError(f"zero-size tensor {a.shape}")
    return a


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v!r}")
    return t


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (1, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 1, 1)
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.groups < 1:
            raise ValueError("groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError("kernel/stride must be positive and padding non-negative")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def is_spatial_only(self) -> bool:
        return self.kernel[0] == 1 and self.padding[0] == 0 and self.stride[0] == 1

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, int, int, int, int]:
        n, c, *dims = in_shape
        if c != self.in_channels:
            raise ShapeError(f"input has {c} channels, conv expects {self.in_channels}")
        out = []
        for x, k, s, p in zip(dims, self.kernel, self.stride, self.padding):
            if x + 2 * p < k:
                raise ShapeError(f"padded extent {x + 2 * p} smaller than kernel {k}")
            out.append((x + 2 * p - k) // s + 1)
        return (n, self.out_channels, *out)


def fan_in_uniform(shape, fan_in: int, rng: np.random.Generator, gain: float = 6.0) -> np.ndarray:
    bound = math.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ConvLayer:
    spec: ConvSpec
    weight: np.ndarray
    bias: np.ndarray | None = None
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray | None = field(init=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.weight.shape != self.spec.weight_shape:
            raise ShapeError(f"weight shape {self.weight.shape} != {self.spec.weight_shape}")
        if self.spec.bias and self.bias is None:
            self.bias = np.zeros(self.spec.out_channels)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.spec.out_channels,):
                raise ShapeError("bias length must equal out_channels")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @classmethod
    def create(cls, spec: ConvSpec, rng: np.random.Generator) -> "ConvLayer":
        fan_in = spec.weight_shape[1] * math.prod(spec.kernel)
        return cls(spec, fan_in_uniform(spec.weight_shape, fan_in, rng))

    def zero_grad(self):
        self.grad_weight[...] = 0.0
        if self.grad_bias is not None:
            self.grad_bias[...] = 0.0


@dataclass
class BnLayer:
    channels: int
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    gamma: np.ndarray = None
    beta: np.ndarray = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        c = self.channels
        self.gamma = np.ones(c) if self.gamma is None else np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.zeros(c) if self.beta is None else np.asarray(self.beta, dtype=np.float64)
        self.running_mean = np.zeros(c) if self.running_mean is None else np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.ones(c) if self.running_var is None else np.asarray(self.running_var, dtype=np.float64)
        for v in (self.gamma, self.beta, self.running_mean, self.running_var):
            if v.shape != (c,):
                raise ShapeError("BN vectors must have length `channels`")
        if not 0.0 < self.momentum < 1.0 or self.eps <= 0:
            raise ValueError("need eps > 0 and momentum in (0, 1)")
        self.grad_gamma = np.zeros(c)
        self.grad_beta = np.zeros(c)

    def zero_grad(self):
        self.grad_gamma[...] = 0.0
        self.grad_beta[...] = 0.0


@dataclass
class LinearLayer:
    """Fully connected map applied to the last axis."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def create(cls, in_features: int, out_features: int, rng: np.random.Generator) -> "LinearLayer":
        w = fan_in_uniform((out_features, in_features), in_features, rng, gain=1.0)
        return cls(w, np.zeros(out_features))

    def zero_grad(self):
        self.grad_weight[...] = 0.0
        self.grad_bias[...] = 0.0


# --------------------------------------------------------------------------
# convolution


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    pt, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _im2col(x: np.ndarray, spec: ConvSpec):
    """Patch matrix of shape (groups, N*T'*H'*W', C_in/groups * kt*kh*kw)."""
    out_shape = spec.output_shape(x.shape)
    n, _, to, ho, wo = out_shape
    st, sh, sw = spec.stride
    g = spec.groups
    cg = spec.in_channels // g
    win = sliding_window_view(_pad(x, spec.padding), spec.kernel, axis=(2, 3, 4))
    win = win[:, :, : (to - 1) * st + 1 : st, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    win = win.reshape(n, g, cg, to, ho, wo, *spec.kernel)
    cols = win.transpose(1, 0, 3, 4, 5, 2, 6, 7, 8).reshape(g, n * to * ho * wo, -1)
    return cols, out_shape


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Grouped 3D cross-correlation (no kernel flip) with zero padding."""
    spec = layer.spec
    x = as_tensor5(x)
    cols, (n, co, to, ho, wo) = _im2col(x, spec)
    g = spec.groups
    w = layer.weight.reshape(g, 1, co // g, -1)
    # one product per output frame, so every frame takes the same BLAS path
    # regardless of its position (frame permutations commute exactly)
    cols = cols.reshape(g, n * to, ho * wo, -1)
    out = np.matmul(cols, w.transpose(0, 1, 3, 2))  # (g, N*T', H'*W', co/g)
    out = out.reshape(g, n, to, ho, wo, co // g).transpose(1, 0, 5, 2, 3, 4)
    out = np.ascontiguousarray(out.reshape(n, co, to, ho, wo))
    if layer.bias is not None:
        out += layer.bias[None, :, None, None, None]
    return out


def conv_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray):
    """Return (grad_input, grad_weight, grad_bias); parameter grads are also accumulated."""
    spec = layer.spec
    x = as_tensor5(x)
    cols, out_shape = _im2col(x, spec)
    if grad_out.shape != out_shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {out_shape}")
    n, co, to, ho, wo = out_shape
    g = spec.groups
    cg, og = spec.in_channels // g, co // g
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride

    dy = grad_out.reshape(n, g, og, to, ho, wo).transpose(1, 0, 3, 4, 5, 2).reshape(g, -1, og)
    gw = np.matmul(dy.transpose(0, 2, 1), cols).reshape(spec.weight_shape)
    gb = grad_out.sum(axis=(0, 2, 3, 4)) if layer.bias is not None else None

    dcols = np.matmul(dy, layer.weight.reshape(g, og, -1))  # (g, M, cg*K)
    dcols = dcols.reshape(g, n, to, ho, wo, cg, kt, kh, kw).transpose(1, 0, 5, 6, 7, 8, 2, 3, 4)
    dcols = dcols.reshape(n, spec.in_channels, kt, kh, kw, to, ho, wo)
    pt, ph, pw = spec.padding
    _, _, t, h, w = x.shape
    dxp = np.zeros((n, spec.in_channels, t + 2 * pt, h + 2 * ph, w + 2 * pw))
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                dxp[:, :, a : a + st * to : st, b : b + sh * ho : sh, c : c + sw * wo : sw] += dcols[:, :, a, b, c]
    gx = dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]

    layer.grad_weight += gw
    if gb is not None:
        layer.grad_bias += gb
    return np.ascontiguousarray(gx), gw, gb


# --------------------------------------------------------------------------
# batch norm


def _check_bn(x: np.ndarray, layer: BnLayer):
    if x.shape[1] != layer.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, BN expects {layer.channels}")


def _bcast(v: np.ndarray) -> np.ndarray:
    return v[None, :, None, None, None]


def bn_forward(x: np.ndarray, layer: BnLayer, mode: str = "train") -> np.ndarray:
    """Per-channel normalisation over (N, T, H, W).

    Train mode uses batch statistics and updates the running estimates
    (unbiased variance, as in common frameworks); eval mode uses the
    running estimates.
    """
    x = as_tensor5(x)
    _check_bn(x, layer)
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3, 4))
        var = x.var(axis=(0, 2, 3, 4))
        m = x.size // layer.channels
        unbiased = var * m / (m - 1) if m > 1 else var
        layer.running_mean *= 1.0 - layer.momentum
        layer.running_mean += layer.momentum * mean
        layer.running_var *= 1.0 - layer.momentum
        layer.running_var += layer.momentum * unbiased
    elif mode == "eval":
        mean, var = layer.running_mean, layer.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x_hat = (x - _bcast(mean)) / _bcast(np.sqrt(var + layer.eps))
    return _bcast(layer.gamma) * x_hat + _bcast(layer.beta)


def bn_backward(x: np.ndarray, layer: BnLayer, grad_out: np.ndarray, mode: str = "train"):
    """Return (grad_input, grad_gamma, grad_beta); parameter grads are also accumulated."""
    x = as_tensor5(x)
    _check_bn(x, layer)
    axes = (0, 2, 3, 4)
    if mode == "train":
        mean, var = x.mean(axis=axes), x.var(axis=axes)
    else:
        mean, var = layer.running_mean, layer.running_var
    inv = 1.0 / np.sqrt(var + layer.eps)
    x_hat = (x - _bcast(mean)) * _bcast(inv)
    g_beta = grad_out.sum(axis=axes)
    g_gamma = (grad_out * x_hat).sum(axis=axes)
    if mode == "train":
        m = x.size // layer.channels
        gx = _bcast(layer.gamma * inv / m) * (m * grad_out - _bcast(g_beta) - x_hat * _bcast(g_gamma))
    else:
        gx = grad_out * _bcast(layer.gamma * inv)
    layer.grad_gamma += g_gamma
    layer.grad_beta += g_beta
    return gx, g_gamma, g_beta


# --------------------------------------------------------------------------
# activations, pooling, head, loss


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def max_pool_spatial(x: np.ndarray, kernel: int = 3, stride: int = 2, padding: int = 1) -> np.ndarray:
    """Per-frame spatial max pooling; padding cells never win."""
    out, _ = _max_pool_windows(x, kernel, stride, padding)
    return out


def _max_pool_windows(x, kernel, stride, padding):
    x = as_tensor5(x)
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(3, 4))[:, :, :, ::stride, ::stride]
    win = win.reshape(*win.shape[:5], kernel * kernel)
    arg = win.argmax(axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def max_pool_spatial_backward(x, grad_out, kernel: int = 3, stride: int = 2, padding: int = 1) -> np.ndarray:
    _, arg = _max_pool_windows(x, kernel, stride, padding)
    n, c, t, h, w = x.shape
    ho, wo = arg.shape[3:]
    dxp = np.zeros((n, c, t, h + 2 * padding, w + 2 * padding))
    for j in range(kernel * kernel):
        a, b = divmod(j, kernel)
        dxp[:, :, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += grad_out * (arg == j)
    return dxp[:, :, :, padding : padding + h, padding : padding + w]


def global_avg_pool_spatial(x: np.ndarray) -> np.ndarray:
    """Average over H and W separately for every frame: N x C x T x 1 x 1."""
    return as_tensor5(x).mean(axis=(3, 4), keepdims=True)


def global_avg_pool_spatial_backward(x_shape, grad_out: np.ndarray) -> np.ndarray:
    h, w = x_shape[3], x_shape[4]
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()


def linear_forward(x: np.ndarray, layer: LinearLayer) -> np.ndarray:
    return x @ layer.weight.T + layer.bias


def linear_backward(x: np.ndarray, layer: LinearLayer, grad_out: np.ndarray):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad_out.reshape(-1, grad_out.shape[-1])
    gw = flat_g.T @ flat_x
    gb = flat_g.sum(axis=0)
    layer.grad_weight += gw
    layer.grad_bias += gb
    return grad_out @ layer.weight, gw, gb


def frame_mean(per_frame: np.ndarray) -> np.ndarray:
    """Mean over axis 1 with correctly rounded sums, so frame order cannot change the result."""
    moved = np.moveaxis(per_frame, 1, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    sums = np.array([math.fsum(row) for row in flat]).reshape(moved.shape[:-1])
    return sums / per_frame.shape[1]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of `labels` under softmax(logits); returns (loss, d loss / d logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("need one label per row of logits")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    passed: bool
    checked: int = 0


def finite_diff_check(
    f: Callable[[], float],
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    tol: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    abs_floor: float = 1e-6,
) -> list[GradCheckReport]:
    """Compare analytic gradients with central differences.

    `f` evaluates the scalar objective from the current contents of the
    arrays in `params`, which are perturbed in place and restored.
    The relative error of an entry is |a - n| / max(|a|, |n|, abs_floor);
    the floor keeps analytically-zero entries from being judged on
    rounding noise alone.  With `max_entries`, a random subset of each
    block is checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    reports = []
    for name, p in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError(f"parameter {name!r} must be a contiguous array")
        idx: Iterable[int] = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        max_abs = max_rel = 0.0
        count = 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError(f"non-finite objective while perturbing {name}[{i}]")
            numeric = (fp - fm) / (2.0 * step)
            err = abs(analytic[i] - numeric)
            rel = err / max(abs(analytic[i]), abs(numeric), abs_floor)
            max_abs, max_rel = max(max_abs, err), max(max_rel, rel)
            count += 1
        reports.append(GradCheckReport(name, float(max_abs), float(max_rel), bool(max_rel < tol), count))
    return reports
