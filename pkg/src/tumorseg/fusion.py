"""Parallel multi-scale branches: pre-activation residual blocks and fusion.

A fusion module carries one branch per scale. Each branch runs a short
chain of residual blocks at its own resolution, then every output scale is
rebuilt as the sum of resampled contributions from all input scales. The
resample paths are purely linear (bare convolutions, no bias, no
normalization, no activation), so fusing a sum of inputs equals the sum of
fused inputs; tests lean on that superposition property.

Scales are numbered so that scale s has spatial dims base >> (s - 1): going
one scale deeper halves each axis. A module may also grow the pyramid by
one scale, produced by a strided convolution chain from the deepest
existing branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import ConvSpec, conv3d, instance_norm, leaky_relu, trilinear_resize
from .validation import as_tensor4


@dataclass
class ResidualBlockWeights:
    """Two norm+act+conv stages wrapped by an identity shortcut."""

    norm0_gain: np.ndarray
    norm0_shift: np.ndarray
    conv0_weight: np.ndarray
    norm1_gain: np.ndarray
    norm1_shift: np.ndarray
    conv1_weight: np.ndarray

    def __post_init__(self):
        w0 = np.asarray(self.conv0_weight, dtype=np.float32)
        w1 = np.asarray(self.conv1_weight, dtype=np.float32)
        for name, w in (("conv0", w0), ("conv1", w1)):
            if w.ndim != 5 or w.shape[0] != w.shape[1] or w.shape[2:] != (3, 3, 3):
                raise ValueError(
                    f"{name} weight must be (w, w, 3, 3, 3) for a residual block, got {w.shape}"
                )
        if w0.shape[0] != w1.shape[0]:
            raise ValueError(f"conv0 width {w0.shape[0]} != conv1 width {w1.shape[0]}")
        self.conv0_weight = w0
        self.conv1_weight = w1
        self.norm0_gain = np.asarray(self.norm0_gain, dtype=np.float32)
        self.norm0_shift = np.asarray(self.norm0_shift, dtype=np.float32)
        self.norm1_gain = np.asarray(self.norm1_gain, dtype=np.float32)
        self.norm1_shift = np.asarray(self.norm1_shift, dtype=np.float32)

    @property
    def width(self):
        return self.conv0_weight.shape[0]


def residual_block(x, weights: ResidualBlockWeights, *, eps=1e-5, slope=0.01):
    """out = x + conv(act(norm(conv(act(norm(x)))))), channel-preserving.

    Pre-activation layout: normalization and the nonlinearity run before each
    convolution, and the shortcut skips straight from input to output.
    """
    x = as_tensor4(x, channels=weights.width, name="residual block input")
    spec = ConvSpec.same(weights.width, weights.width)
    t = leaky_relu(instance_norm(x, weights.norm0_gain, weights.norm0_shift, eps=eps), alpha=slope)
    t = conv3d(t, weights.conv0_weight, None, spec)
    t = leaky_relu(instance_norm(t, weights.norm1_gain, weights.norm1_shift, eps=eps), alpha=slope)
    t = conv3d(t, weights.conv1_weight, None, spec)
    return x + t


@dataclass
class FuseWeights:
    """Resample-path weights for one fusion step.

    down[(j, i)] holds the i - j chained stride-2 conv weights taking scale
    j down to scale i; intermediate steps keep the source width, the final
    step maps onto the target width. up[(j, i)] holds the single pointwise
    conv weight applied before trilinear upsampling from scale j to scale i.
    All paths are bias-free and linear.
    """

    in_scales: tuple
    out_scales: tuple
    down: dict
    up: dict

    def __post_init__(self):
        self.in_scales = tuple(int(s) for s in self.in_scales)
        self.out_scales = tuple(int(s) for s in self.out_scales)
        if not self.in_scales or list(self.in_scales) != sorted(set(self.in_scales)):
            raise ValueError(f"in_scales must be sorted and unique, got {self.in_scales}")
        if not self.out_scales or list(self.out_scales) != sorted(set(self.out_scales)):
            raise ValueError(f"out_scales must be sorted and unique, got {self.out_scales}")
        grown = [s for s in self.out_scales if s not in self.in_scales]
        if grown and (len(grown) > 1 or grown[0] != max(self.in_scales) + 1):
            raise ValueError(
                f"a fusion step may grow at most one scale, directly below the deepest: "
                f"in {self.in_scales} out {self.out_scales}"
            )
        for (j, i), chain in self.down.items():
            if len(chain) != i - j:
                raise ValueError(
                    f"downsample path {j}->{i} needs {i - j} stride-2 convs, got {len(chain)}"
                )

    def contributors(self, target):
        """Input scales feeding the given output scale."""
        if target in self.in_scales:
            return self.in_scales
        return (max(self.in_scales),)


def _down_path(x, chain):
    for w in chain:
        w = np.asarray(w, dtype=np.float32)
        spec = ConvSpec.same(w.shape[1], w.shape[0], stride=2)
        x = conv3d(x, w, None, spec)
    return x


def _up_path(x, weight, target_dims):
    w = np.asarray(weight, dtype=np.float32)
    spec = ConvSpec(w.shape[1], w.shape[0], kernel=(1, 1, 1), padding=(0, 0, 0))
    return trilinear_resize(conv3d(x, w, None, spec), target_dims)


def fuse(branches, weights: FuseWeights):
    """Sum resampled branch contributions into each output scale.

    branches are ordered by weights.in_scales and must form a consistent
    pyramid (each scale's dims are the previous halved). Contributions are
    accumulated in ascending source-scale order.
    """
    if len(branches) != len(weights.in_scales):
        raise ValueError(
            f"got {len(branches)} branches for in_scales {weights.in_scales}"
        )
    branches = [as_tensor4(b, name=f"branch at scale {s}") for b, s in zip(branches, weights.in_scales)]
    base_scale = weights.in_scales[0]
    base_dims = branches[0].shape[1:]
    dims_at = {}
    for s in weights.in_scales + tuple(weights.out_scales):
        shift = s - base_scale
        dims_at[s] = tuple(d >> shift for d in base_dims)
    for b, s in zip(branches, weights.in_scales):
        if b.shape[1:] != dims_at[s]:
            raise ValueError(
                f"branch at scale {s} has dims {b.shape[1:]}, expected {dims_at[s]} "
                f"from the scale-{base_scale} branch"
            )

    by_scale = dict(zip(weights.in_scales, branches))
    outputs = []
    for i in weights.out_scales:
        acc = None
        for j in weights.contributors(i):
            if j == i:
                term = by_scale[j]
            elif j < i:
                term = _down_path(by_scale[j], weights.down[(j, i)])
            else:
                term = _up_path(by_scale[j], weights.up[(j, i)], dims_at[i])
            if term.shape[1:] != dims_at[i]:
                raise ValueError(
                    f"path {j}->{i} produced dims {term.shape[1:]}, expected {dims_at[i]}"
                )
            acc = term if acc is None else acc + term
        outputs.append(acc)
    return outputs


@dataclass
class FusionModuleWeights:
    """One module: residual chains per input scale, then a fuse step."""

    blocks: dict
    fuse: FuseWeights

    def __post_init__(self):
        missing = [s for s in self.fuse.in_scales if s not in self.blocks]
        if missing:
            raise ValueError(f"missing residual blocks for scales {missing}")


def fusion_module_forward(inputs, module: FusionModuleWeights, *, eps=1e-5, slope=0.01):
    """Run each branch's residual chain at its own scale, then fuse."""
    staged = []
    for x, s in zip(inputs, module.fuse.in_scales):
        for block in module.blocks[s]:
            x = residual_block(x, block, eps=eps, slope=slope)
        staged.append(x)
    return fuse(staged, module.fuse)
