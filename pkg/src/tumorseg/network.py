"""Network assembly: parameter layout, forward pass, and cost accounting.

One structure, three walks. Every component knows the names and shapes of
its parameters (`layout`), how to apply them (`forward`), and what dense
multiply-accumulate work it does at given spatial dims (`macs`). Keeping
the walks on the same objects means the layout used to initialize or load
weights cannot drift from the forward pass that consumes them.

The chain for a single network:

  stem (2 conv blocks, full resolution)
    -> strided transition to scale 1
    -> fusion modules (multi-scale residual branches, see fusion.py)
    -> deep branches recovered to scale 1 and concatenated
    -> optional EM attention over the concatenation
    -> pointwise reduction, upsample to full resolution
    -> add stem features (long skip)
    -> 2 decode conv blocks
    -> pointwise head, sigmoid

The three output channels are nested-region probabilities in the order
given by configs.REGION_NAMES.
"""

from __future__ import annotations

import numpy as np

from .attention import EmaParams, em_attention
from .configs import NetConfig
from .fusion import FuseWeights, FusionModuleWeights, ResidualBlockWeights, fusion_module_forward
from .ops import ConvSpec, conv3d, instance_norm, leaky_relu, sigmoid, trilinear_resize
from .validation import AXIS_NAMES, as_tensor4


def _halved(dims, times=1):
    return tuple(d >> times for d in dims)


class _ConvBlock:
    """conv3x3x3 (no bias) -> instance norm -> leaky relu."""

    def __init__(self, prefix, in_channels, out_channels, config, *, stride=1):
        self.prefix = prefix
        self.spec = ConvSpec.same(in_channels, out_channels, stride=stride)
        self.eps = config.norm_eps
        self.slope = config.leaky_slope

    def layout(self):
        c = self.spec.out_channels
        return {
            f"{self.prefix}.conv.weight": self.spec.weight_shape,
            f"{self.prefix}.norm.gain": (c,),
            f"{self.prefix}.norm.shift": (c,),
        }

    def forward(self, params, x):
        y = conv3d(x, params[f"{self.prefix}.conv.weight"], None, self.spec)
        y = instance_norm(
            y, params[f"{self.prefix}.norm.gain"], params[f"{self.prefix}.norm.shift"], eps=self.eps
        )
        return leaky_relu(y, alpha=self.slope)

    def macs(self, dims):
        return self.spec.macs(dims), self.spec.output_dims(dims)


class _Pointwise:
    """1x1x1 convolution, optionally biased."""

    def __init__(self, prefix, in_channels, out_channels, *, has_bias):
        self.prefix = prefix
        self.spec = ConvSpec(
            in_channels, out_channels, kernel=(1, 1, 1), padding=(0, 0, 0), has_bias=has_bias
        )

    def layout(self):
        shapes = {f"{self.prefix}.weight": self.spec.weight_shape}
        if self.spec.has_bias:
            shapes[f"{self.prefix}.bias"] = (self.spec.out_channels,)
        return shapes

    def forward(self, params, x):
        bias = params[f"{self.prefix}.bias"] if self.spec.has_bias else None
        return conv3d(x, params[f"{self.prefix}.weight"], bias, self.spec)

    def macs(self, dims):
        return self.spec.macs(dims), dims


class _FusionModule:
    """Residual chains per input scale plus one fuse step."""

    def __init__(self, prefix, in_scales, out_scales, config):
        self.prefix = prefix
        self.in_scales = tuple(in_scales)
        self.out_scales = tuple(out_scales)
        self.blocks = config.blocks_per_branch
        self.width = {s: config.branch_width(s) for s in set(in_scales) | set(out_scales)}
        self.eps = config.norm_eps
        self.slope = config.leaky_slope
        self.down, self.up = self._paths()

    def _paths(self):
        down, up = {}, {}
        for i in self.out_scales:
            sources = self.in_scales if i in self.in_scales else (max(self.in_scales),)
            for j in sources:
                if j < i:
                    down[(j, i)] = i - j
                elif j > i:
                    up[(j, i)] = True
        return down, up

    def _block_names(self, scale, index):
        base = f"{self.prefix}.branch{scale}.block{index}"
        return {
            "norm0_gain": f"{base}.norm0.gain",
            "norm0_shift": f"{base}.norm0.shift",
            "conv0_weight": f"{base}.conv0.weight",
            "norm1_gain": f"{base}.norm1.gain",
            "norm1_shift": f"{base}.norm1.shift",
            "conv1_weight": f"{base}.conv1.weight",
        }

    def _down_step_shapes(self, j, i):
        # intermediates keep the source width, the last step maps to the target width
        shapes = []
        for t in range(i - j):
            cin = self.width[j]
            cout = self.width[i] if t == i - j - 1 else self.width[j]
            shapes.append((cout, cin, 3, 3, 3))
        return shapes

    def layout(self):
        shapes = {}
        for s in self.in_scales:
            w = self.width[s]
            for b in range(self.blocks):
                names = self._block_names(s, b)
                shapes[names["norm0_gain"]] = (w,)
                shapes[names["norm0_shift"]] = (w,)
                shapes[names["conv0_weight"]] = (w, w, 3, 3, 3)
                shapes[names["norm1_gain"]] = (w,)
                shapes[names["norm1_shift"]] = (w,)
                shapes[names["conv1_weight"]] = (w, w, 3, 3, 3)
        for (j, i) in sorted(self.down):
            for t, shape in enumerate(self._down_step_shapes(j, i)):
                shapes[f"{self.prefix}.fuse.down.{j}to{i}.step{t}.weight"] = shape
        for (j, i) in sorted(self.up):
            shapes[f"{self.prefix}.fuse.up.{j}to{i}.weight"] = (self.width[i], self.width[j], 1, 1, 1)
        return shapes

    def _build(self, params):
        blocks = {}
        for s in self.in_scales:
            chain = []
            for b in range(self.blocks):
                names = self._block_names(s, b)
                chain.append(
                    ResidualBlockWeights(**{field: params[name] for field, name in names.items()})
                )
            blocks[s] = tuple(chain)
        down = {
            (j, i): tuple(
                params[f"{self.prefix}.fuse.down.{j}to{i}.step{t}.weight"] for t in range(i - j)
            )
            for (j, i) in self.down
        }
        up = {(j, i): params[f"{self.prefix}.fuse.up.{j}to{i}.weight"] for (j, i) in self.up}
        fuse = FuseWeights(in_scales=self.in_scales, out_scales=self.out_scales, down=down, up=up)
        return FusionModuleWeights(blocks=blocks, fuse=fuse)

    def forward(self, params, branches):
        return fusion_module_forward(branches, self._build(params), eps=self.eps, slope=self.slope)

    def macs(self, scale1_dims):
        dims_at = {s: _halved(scale1_dims, s - 1) for s in set(self.in_scales) | set(self.out_scales)}
        total = 0
        for s in self.in_scales:
            w = self.width[s]
            vox = int(np.prod(dims_at[s]))
            total += self.blocks * 2 * (w * w * 27 * vox)
        for (j, i) in self.down:
            for t, shape in enumerate(self._down_step_shapes(j, i)):
                out_vox = int(np.prod(dims_at[j + t + 1]))
                total += shape[0] * shape[1] * 27 * out_vox
        for (j, i) in self.up:
            vox = int(np.prod(dims_at[j]))
            total += self.width[i] * self.width[j] * vox
        return total


class _Attention:
    """EM attention over the mixed (concatenated) features."""

    def __init__(self, prefix, channels, config):
        self.prefix = prefix
        self.channels = channels
        self.hidden = config.ema_width_effective
        self.num_bases = config.num_bases
        self.iterations = config.em_iterations

    def layout(self):
        return {
            f"{self.prefix}.conv_in.weight": (self.hidden, self.channels, 1, 1, 1),
            f"{self.prefix}.conv_in.bias": (self.hidden,),
            f"{self.prefix}.bases": (self.hidden, self.num_bases),
            f"{self.prefix}.conv_out.weight": (self.channels, self.hidden, 1, 1, 1),
            f"{self.prefix}.conv_out.bias": (self.channels,),
        }

    def forward(self, params, x):
        ema = EmaParams(
            conv_in_weight=params[f"{self.prefix}.conv_in.weight"],
            conv_in_bias=params[f"{self.prefix}.conv_in.bias"],
            conv_out_weight=params[f"{self.prefix}.conv_out.weight"],
            conv_out_bias=params[f"{self.prefix}.conv_out.bias"],
            bases=params[f"{self.prefix}.bases"],
            iterations=self.iterations,
        )
        return em_attention(x, ema)

    def macs(self, dims):
        n = int(np.prod(dims))
        conv = 2 * self.channels * self.hidden * n
        # T rounds of (assign, re-estimate) plus the final reconstruction,
        # each an N x C' x K matrix product
        matmul = (2 * self.iterations + 1) * n * self.hidden * self.num_bases
        return conv, matmul


class MultiScaleNet:
    """Everything derivable from a NetConfig: layout, forward, cost model."""

    def __init__(self, config: NetConfig):
        self.config = config
        stem_w = config.stem_width_effective
        self.stem0 = _ConvBlock("stem.block0", config.in_channels, stem_w, config)
        self.stem1 = _ConvBlock("stem.block1", stem_w, stem_w, config)
        self.transition = _ConvBlock("transition", stem_w, config.branch_width(1), config, stride=2)
        self.fusion_modules = []
        in_scales = (1,)
        for m, out_scales in enumerate(config.fusion_schedule):
            self.fusion_modules.append(_FusionModule(f"fusion{m}", in_scales, out_scales, config))
            in_scales = out_scales
        self.recover = [
            _Pointwise(f"recover.scale{s}", config.branch_width(s), config.branch_width(s), has_bias=False)
            for s in config.final_scales[1:]
        ]
        mixed = config.mixed_width
        self.attention = _Attention("attn", mixed, config) if config.ema_enabled else None
        self.reduce = _Pointwise("reduce", mixed, stem_w, has_bias=True)
        self.decode0 = _ConvBlock("decode.block0", stem_w, stem_w, config)
        self.decode1 = _ConvBlock("decode.block1", stem_w, stem_w, config)
        self.head = _Pointwise("head", stem_w, config.out_channels, has_bias=True)

    def _components(self):
        comps = [self.stem0, self.stem1, self.transition, *self.fusion_modules, *self.recover]
        if self.attention is not None:
            comps.append(self.attention)
        comps += [self.reduce, self.decode0, self.decode1, self.head]
        return comps

    def layout(self):
        shapes = {}
        for comp in self._components():
            shapes.update(comp.layout())
        return shapes

    def check_input_dims(self, dims):
        div = self.config.spatial_divisor
        for name, d in zip(AXIS_NAMES, dims):
            if d % div != 0:
                raise ValueError(
                    f"network input {name} must be a multiple of {div} "
                    f"(one halving per scale level), got {d}"
                )

    def forward(self, params, x):
        x = as_tensor4(x, channels=self.config.in_channels, name="network input")
        self.check_input_dims(x.shape[1:])
        encoded = self.stem1.forward(params, self.stem0.forward(params, x))
        branches = [self.transition.forward(params, encoded)]
        for module in self.fusion_modules:
            branches = module.forward(params, branches)
        target = branches[0].shape[1:]
        parts = [branches[0]]
        for comp, deep in zip(self.recover, branches[1:]):
            parts.append(trilinear_resize(comp.forward(params, deep), target))
        mixed = np.concatenate(parts, axis=0)
        if self.attention is not None:
            mixed = self.attention.forward(params, mixed)
        reduced = trilinear_resize(self.reduce.forward(params, mixed), encoded.shape[1:])
        decoded = reduced + encoded
        decoded = self.decode1.forward(params, self.decode0.forward(params, decoded))
        return sigmoid(self.head.forward(params, decoded))

    def macs(self, input_dims):
        """Dense multiply-accumulates split into conv work and attention matmuls."""
        dims = tuple(int(d) for d in input_dims)
        self.check_input_dims(dims)
        conv = 0
        m, dims_full = self.stem0.macs(dims)
        conv += m
        m, dims_full = self.stem1.macs(dims_full)
        conv += m
        m, dims_s1 = self.transition.macs(dims_full)
        conv += m
        for module in self.fusion_modules:
            conv += module.macs(dims_s1)
        for comp, s in zip(self.recover, self.config.final_scales[1:]):
            m, _ = comp.macs(_halved(dims_s1, s - 1))
            conv += m
        attention = 0
        if self.attention is not None:
            c, a = self.attention.macs(dims_s1)
            conv += c
            attention += a
        m, _ = self.reduce.macs(dims_s1)
        conv += m
        m, _ = self.decode0.macs(dims_full)
        conv += m
        m, _ = self.decode1.macs(dims_full)
        conv += m
        m, _ = self.head.macs(dims_full)
        conv += m
        return {"conv": conv, "attention": attention}


def network_layout(config: NetConfig):
    return MultiScaleNet(config).layout()


def param_count(config: NetConfig) -> int:
    return sum(int(np.prod(shape)) for shape in network_layout(config).values())


def macs_breakdown(config: NetConfig, input_dims) -> dict:
    parts = MultiScaleNet(config).macs(input_dims)
    parts["total"] = parts["conv"] + parts["attention"]
    return parts


def flops_estimate(config: NetConfig, input_dims) -> int:
    """2 x multiply-accumulates over convolutions and attention matmuls."""
    return 2 * macs_breakdown(config, input_dims)["total"]


def _as_params(weights):
    params = getattr(weights, "params", weights)
    if not hasattr(params, "__getitem__"):
        raise ValueError("weights must be a WeightStore or a name -> array mapping")
    return params


def validate_parameters(params, config: NetConfig):
    """Check a parameter mapping against the config's layout, name by name."""
    layout = network_layout(config)
    missing = sorted(set(layout) - set(params))
    if missing:
        raise ValueError(f"weights are missing {len(missing)} parameters, first: {missing[:5]}")
    extra = sorted(set(params) - set(layout))
    if extra:
        raise ValueError(f"weights contain {len(extra)} unknown parameters, first: {extra[:5]}")
    for name, shape in layout.items():
        got = tuple(np.shape(params[name]))
        if got != tuple(shape):
            raise ValueError(f"parameter {name} has shape {got}, layout requires {tuple(shape)}")


def single_forward(x, weights, config: NetConfig):
    """Probability maps (3, D, H, W) for one network applied to one patch."""
    params = _as_params(weights)
    net = MultiScaleNet(config)
    validate_parameters(params, config)
    return net.forward(params, x)


def cascade_forward(x, stage_weights, stage_configs):
    """Run the two-stage cascade; returns (stage1_probs, stage2_probs).

    Stage 2 sees the original input concatenated with stage 1's region
    probabilities, so its in_channels must equal stage1 in + out.
    """
    cfg1, cfg2 = stage_configs
    w1, w2 = stage_weights
    expected = cfg1.in_channels + cfg1.out_channels
    if cfg2.in_channels != expected:
        raise ValueError(
            f"cascade stage2 expects {cfg2.in_channels} input channels but stage1 "
            f"produces {expected} (input + regions)"
        )
    p1 = single_forward(x, w1, cfg1)
    x2 = np.concatenate([np.asarray(x, dtype=np.float32), p1], axis=0)
    p2 = single_forward(x2, w2, cfg2)
    return p1, p2
