"""Dense 3D tensor kernels.

All kernels take and return float32 arrays laid out (channels, depth,
height, width) and are pure functions of their inputs: same inputs, same
bits, no global state. Reductions that feed a divide (means, variances,
softmax denominators) run in float64 before the result is cast back, which
keeps patch averaging and normalization stable without giving up a
reproducible accumulation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .validation import AXIS_NAMES, as_tensor4, check_axes, check_triple


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 3D convolution layer.

    kernel, stride and padding are per-axis triples (depth, height, width).
    Stride entries are restricted to 1 or 2; that is the only downsampling
    the networks here use, and rejecting the rest catches transposed-args
    bugs cheaply.
    """

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 1, 1)
    padding: tuple = (1, 1, 1)
    has_bias: bool = False

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(
                f"channel counts must be positive, got in={self.in_channels} out={self.out_channels}"
            )
        object.__setattr__(self, "kernel", check_triple(self.kernel, name="kernel"))
        object.__setattr__(self, "stride", check_triple(self.stride, name="stride"))
        object.__setattr__(self, "padding", check_triple(self.padding, name="padding", minimum=0))
        for s in self.stride:
            if s not in (1, 2):
                raise ValueError(f"stride entries must be 1 or 2, got {self.stride}")

    @classmethod
    def same(cls, in_channels, out_channels, *, kernel=3, stride=1, has_bias=False):
        """Odd-kernel spec with padding k//2, so stride-1 output dims equal input dims."""
        k = (kernel,) * 3 if np.isscalar(kernel) else tuple(kernel)
        for kk in k:
            if kk % 2 != 1:
                raise ValueError(f"'same' padding needs odd kernels, got {k}")
        s = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
        p = tuple(kk // 2 for kk in k)
        return cls(in_channels, out_channels, kernel=k, stride=s, padding=p, has_bias=has_bias)

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels) + self.kernel

    def output_dims(self, input_dims):
        """Spatial output dims for the given input dims, rejecting non-positive results."""
        dims = check_triple(input_dims, name="input dims")
        out = []
        for name, length, k, s, p in zip(AXIS_NAMES, dims, self.kernel, self.stride, self.padding):
            span = length + 2 * p - k
            if span < 0:
                raise ValueError(
                    f"kernel does not fit along {name}: length {length}, kernel {k}, padding {p}"
                )
            out.append(span // s + 1)
        return tuple(out)

    def param_count(self):
        n = self.out_channels * self.in_channels * int(np.prod(self.kernel))
        if self.has_bias:
            n += self.out_channels
        return n

    def macs(self, input_dims):
        """Multiply-accumulate count: Cout * Cin * prod(kernel) * prod(output dims)."""
        out_dims = self.output_dims(input_dims)
        return self.out_channels * self.in_channels * int(np.prod(self.kernel)) * int(np.prod(out_dims))


def conv3d(x, weights, bias, spec: ConvSpec):
    """3D convolution in cross-correlation form (no kernel mirroring).

    Args:
        x: input tensor (Cin, D, H, W).
        weights: (Cout, Cin, kD, kH, kW) float32.
        bias: (Cout,) float32, required iff spec.has_bias.
        spec: layer description; x and weights must match it exactly.

    The sum over kernel offsets runs in a fixed order (depth, height, width
    ascending), with the channel contraction for each offset done as one
    matrix product. That pins the accumulation order, so repeated calls with
    the same inputs are bit-identical.
    """
    x = as_tensor4(x, channels=spec.in_channels, name="conv3d input")
    w = np.asarray(weights, dtype=np.float32)
    if w.shape != spec.weight_shape:
        raise ValueError(
            f"conv3d weights have shape {w.shape}, spec requires {spec.weight_shape}"
        )
    if spec.has_bias:
        b = None if bias is None else np.asarray(bias, dtype=np.float32)
        if b is None or b.shape != (spec.out_channels,):
            got = None if b is None else b.shape
            raise ValueError(f"conv3d bias must have shape ({spec.out_channels},), got {got}")
    elif bias is not None:
        raise ValueError("conv3d got a bias but spec.has_bias is False")

    out_dims = spec.output_dims(x.shape[1:])
    kd, kh, kw = spec.kernel
    sd, sh, sw = spec.stride
    od, oh, ow = out_dims

    if spec.kernel == (1, 1, 1) and spec.stride == (1, 1, 1) and spec.padding == (0, 0, 0):
        out = np.tensordot(w[:, :, 0, 0, 0], x, axes=(1, 0))
    else:
        pd, ph, pw = spec.padding
        if (pd, ph, pw) != (0, 0, 0):
            x = np.pad(x, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))
        out = np.zeros((spec.out_channels,) + out_dims, dtype=np.float32)
        for dz in range(kd):
            for dy in range(kh):
                for dx in range(kw):
                    window = x[
                        :,
                        dz : dz + od * sd : sd,
                        dy : dy + oh * sh : sh,
                        dx : dx + ow * sw : sw,
                    ]
                    out += np.tensordot(w[:, :, dz, dy, dx], window, axes=(1, 0))

    if spec.has_bias:
        out = out + b[:, None, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def _resample_axis(arr, axis, new_len):
    old = arr.shape[axis]
    if new_len == old:
        return arr
    if old == 1:
        return np.repeat(arr, new_len, axis=axis)
    if new_len == 1:
        # endpoint-aligned grids: a single output sample sits on source index 0
        pos = np.zeros(1)
    else:
        pos = np.arange(new_len) * ((old - 1) / (new_len - 1))
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, old - 1)
    i1 = np.minimum(i0 + 1, old - 1)
    frac = (pos - i0).astype(np.float32)
    shape = [1] * arr.ndim
    shape[axis] = new_len
    frac = frac.reshape(shape)
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, i1, axis=axis)
    return lo + (hi - lo) * frac


def trilinear_resize(x, target_dims):
    """Separable linear resampling to target spatial dims, endpoints aligned.

    Output grid positions map to input positions via x' = x * (S-1) / (T-1),
    so the first and last samples along each axis are preserved exactly.
    Axes of size 1 broadcast their single sample. Resampling runs axis by
    axis in depth, height, width order. A no-op target returns a copy that
    is bitwise equal to the input.
    """
    x = as_tensor4(x, name="resize input")
    target = check_triple(target_dims, name="target_dims")
    if target == x.shape[1:]:
        return x.copy()
    out = x
    for axis, new_len in zip((1, 2, 3), target):
        out = _resample_axis(out, axis, new_len)
    return np.ascontiguousarray(out, dtype=np.float32)


def instance_norm(x, gain, shift, *, eps=1e-5):
    """Per-channel standardization over the spatial extent, then affine.

    Mean and the biased variance are accumulated in float64; eps sits under
    the square root so constant channels come out as plain `shift`.
    """
    x = as_tensor4(x, name="instance_norm input")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    c = x.shape[0]
    g = np.asarray(gain, dtype=np.float32)
    s = np.asarray(shift, dtype=np.float32)
    if g.shape != (c,) or s.shape != (c,):
        raise ValueError(
            f"gain and shift must have shape ({c},), got {g.shape} and {s.shape}"
        )
    mean = x.mean(axis=(1, 2, 3), dtype=np.float64)
    var = x.var(axis=(1, 2, 3), dtype=np.float64)
    scale = (g.astype(np.float64) / np.sqrt(var + eps)).astype(np.float32)
    centered = x - mean.astype(np.float32)[:, None, None, None]
    return centered * scale[:, None, None, None] + s[:, None, None, None]


def leaky_relu(x, *, alpha=0.01):
    """max(x, alpha*x) elementwise; alpha applied as float32 to avoid promotion."""
    x = np.asarray(x, dtype=np.float32)
    return np.where(x >= 0, x, np.float32(alpha) * x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float32)
    return expit(x)


def softmax(x, *, axis):
    """Shift-by-max softmax; exponential sums accumulate in float64."""
    x = np.asarray(x, dtype=np.float32)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    return (e / denom).astype(np.float32)


_ACTIVATIONS = ("leaky_relu", "sigmoid", "softmax")


def activation(x, kind, *, alpha=0.01, axis=0):
    """Dispatch by name; `axis` only applies to softmax, `alpha` to leaky_relu."""
    if kind == "leaky_relu":
        return leaky_relu(x, alpha=alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis=axis)
    raise ValueError(f"unknown activation {kind!r}, expected one of {_ACTIVATIONS}")


def flip(x, axes):
    """Reverse the given spatial axes (0=depth, 1=height, 2=width) of a (C,D,H,W) tensor."""
    x = as_tensor4(x, name="flip input")
    axes = check_axes(axes)
    if not axes:
        return x.copy()
    return np.ascontiguousarray(np.flip(x, tuple(a + 1 for a in axes)))


def center_span(src_len, dst_len):
    """Overlap of a src-length axis centered in a dst-length axis.

    Returns (src_lo, dst_lo, n): n entries starting at src_lo map onto the
    destination starting at dst_lo. When trimming, the excess splits low
    side first (extra voxel removed high); when padding, likewise.
    """
    if src_len >= dst_len:
        return ((src_len - dst_len) // 2, 0, dst_len)
    return (0, (dst_len - src_len) // 2, src_len)


def pad_or_crop(x, target_dims, *, fill=0.0):
    """Center-align the trailing 3 spatial axes onto target dims.

    Works on (D, H, W) or (C, D, H, W) arrays of any dtype; trimming and
    zero-padding may mix across axes. dtype is preserved, so label maps can
    round-trip through it with an integer fill.
    """
    arr = np.asarray(x)
    if arr.ndim not in (3, 4):
        raise ValueError(f"pad_or_crop expects 3 or 4 axes, got {arr.ndim}")
    target = check_triple(target_dims, name="target_dims")
    spatial = arr.shape[-3:]
    if spatial == target:
        return arr.copy()
    out = np.full(arr.shape[:-3] + target, fill, dtype=arr.dtype)
    spans = [center_span(s, t) for s, t in zip(spatial, target)]
    src = tuple(slice(lo, lo + n) for lo, _, n in spans)
    dst = tuple(slice(lo, lo + n) for _, lo, n in spans)
    out[(...,) + dst] = arr[(...,) + src]
    return out
