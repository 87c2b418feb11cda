import numpy as np
import pytest

from tumorseg.configs import NetConfig
from tumorseg.network import (
    MultiScaleNet,
    cascade_forward,
    flops_estimate,
    macs_breakdown,
    network_layout,
    param_count,
    single_forward,
    validate_parameters,
)

from conftest import init_params, toy_cascade_configs, toy_single_config


def conv_block_params(cin, cout):
    return cout * cin * 27 + 2 * cout


def residual_block_params(w):
    return 2 * (w * w * 27) + 4 * w


class TestLayout:
    def test_expected_names_present(self):
        layout = network_layout(toy_single_config())
        for name in (
            "stem.block0.conv.weight",
            "stem.block1.norm.gain",
            "transition.conv.weight",
            "fusion0.branch1.block0.conv0.weight",
            "fusion0.fuse.down.1to2.step0.weight",
            "fusion3.fuse.down.1to4.step2.weight",
            "fusion3.fuse.up.4to1.weight",
            "recover.scale4.weight",
            "attn.bases",
            "attn.conv_in.bias",
            "reduce.bias",
            "decode.block1.conv.weight",
            "head.weight",
            "head.bias",
        ):
            assert name in layout, name

    def test_ema_disabled_drops_attention_names(self):
        layout = network_layout(toy_single_config(ema_enabled=False))
        assert not any(name.startswith("attn.") for name in layout)

    def test_grown_scale_fed_only_from_deepest_branch(self):
        layout = network_layout(toy_single_config())
        # fusion1 grows scale 3 from inputs (1, 2): only the 2->3 path exists
        assert "fusion1.fuse.down.2to3.step0.weight" in layout
        assert not any("fusion1.fuse.down.1to3" in name for name in layout)

    def test_param_count_tiny_hand_enumeration(self):
        config = NetConfig(
            in_channels=2,
            stem_width=4,
            branch_widths=(4,),
            fusion_schedule=((1,),),
            blocks_per_branch=1,
            ema_enabled=False,
        )
        expected = (
            conv_block_params(2, 4)      # stem.block0
            + conv_block_params(4, 4)    # stem.block1
            + conv_block_params(4, 4)    # transition
            + residual_block_params(4)   # fusion0, one block, no cross paths
            + (4 * 4 + 4)                # reduce (pointwise with bias)
            + conv_block_params(4, 4)    # decode.block0
            + conv_block_params(4, 4)    # decode.block1
            + (3 * 4 + 3)                # head
        )
        assert expected == 2899
        assert param_count(config) == expected

    def test_param_count_toy_hand_enumeration(self):
        config = toy_single_config()
        w = {1: 8, 2: 16, 3: 32, 4: 64}

        def down(j, i):
            total = 0
            for t in range(i - j):
                cout = w[i] if t == i - j - 1 else w[j]
                total += cout * w[j] * 27
            return total

        def up(j, i):
            return w[i] * w[j]

        blocks = {s: 2 * residual_block_params(w[s]) for s in w}
        fusion0 = blocks[1] + down(1, 2)
        fusion1 = blocks[1] + blocks[2] + up(2, 1) + down(1, 2) + down(2, 3)
        fusion2 = (
            blocks[1] + blocks[2] + blocks[3]
            + up(2, 1) + up(3, 1)
            + down(1, 2) + up(3, 2)
            + down(1, 3) + down(2, 3)
            + down(3, 4)
        )
        fusion3 = (
            blocks[1] + blocks[2] + blocks[3] + blocks[4]
            + up(2, 1) + up(3, 1) + up(4, 1)
            + down(1, 2) + up(3, 2) + up(4, 2)
            + down(1, 3) + down(2, 3) + up(4, 3)
            + down(1, 4) + down(2, 4) + down(3, 4)
        )
        mixed = sum(w.values())
        hidden = mixed // 2
        attention = hidden * mixed + hidden + hidden * 8 + mixed * hidden + mixed
        expected = (
            conv_block_params(4, 8)
            + conv_block_params(8, 8)
            + conv_block_params(8, 8)
            + fusion0 + fusion1 + fusion2 + fusion3
            + (w[2] ** 2 + w[3] ** 2 + w[4] ** 2)
            + attention
            + (8 * mixed + 8)
            + conv_block_params(8, 8)
            + conv_block_params(8, 8)
            + (3 * 8 + 3)
        )
        assert expected == 1045607
        assert param_count(config) == expected

    def test_width_multiplier_shrinks_count(self):
        full = param_count(toy_single_config())
        half = param_count(toy_single_config(width_multiplier=0.5))
        assert half < full


class TestForward:
    def test_shape_and_range(self, rng):
        config = toy_single_config()
        params = init_params(config)
        x = rng.standard_normal((4, 32, 32, 32)).astype(np.float32)
        out = single_forward(x, params, config)
        assert out.shape == (3, 32, 32, 32)
        assert out.dtype == np.float32
        assert np.all(np.isfinite(out))
        assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_zero_head_gives_half_everywhere(self, rng):
        config = toy_single_config()
        params = init_params(config)
        params["head.weight"] = np.zeros_like(params["head.weight"])
        params["head.bias"] = np.zeros_like(params["head.bias"])
        x = rng.standard_normal((4, 16, 16, 16)).astype(np.float32)
        out = single_forward(x, params, config)
        assert np.all(out == np.float32(0.5))

    def test_deterministic(self, rng):
        config = toy_single_config()
        params = init_params(config)
        x = rng.standard_normal((4, 16, 16, 16)).astype(np.float32)
        a = single_forward(x, params, config)
        b = single_forward(x, params, config)
        assert np.array_equal(a, b)

    def test_indivisible_dims_rejected(self, rng):
        config = toy_single_config()
        params = init_params(config)
        x = rng.standard_normal((4, 20, 32, 32)).astype(np.float32)
        with pytest.raises(ValueError, match="multiple of 16.*halving"):
            single_forward(x, params, config)

    def test_wrong_channel_count_rejected(self, rng):
        config = toy_single_config()
        params = init_params(config)
        x = rng.standard_normal((3, 16, 16, 16)).astype(np.float32)
        with pytest.raises(ValueError, match="channels"):
            single_forward(x, params, config)

    def test_check_input_dims_names_axis(self):
        net = MultiScaleNet(toy_single_config())
        with pytest.raises(ValueError, match="height"):
            net.check_input_dims((32, 24, 32))


class TestValidateParameters:
    def test_missing_parameter(self):
        config = toy_single_config()
        params = init_params(config)
        del params["head.bias"]
        with pytest.raises(ValueError, match="missing"):
            validate_parameters(params, config)

    def test_unknown_parameter(self):
        config = toy_single_config()
        params = init_params(config)
        params["stray.weight"] = np.zeros(3, np.float32)
        with pytest.raises(ValueError, match="unknown"):
            validate_parameters(params, config)

    def test_shape_mismatch(self):
        config = toy_single_config()
        params = init_params(config)
        params["head.bias"] = np.zeros(4, np.float32)
        with pytest.raises(ValueError, match="head.bias.*shape"):
            validate_parameters(params, config)


class TestCascade:
    def test_shapes_and_ranges(self, rng):
        cfg1, cfg2 = toy_cascade_configs()
        w1, w2 = init_params(cfg1, seed=1), init_params(cfg2, seed=2)
        x = rng.standard_normal((4, 16, 16, 16)).astype(np.float32)
        p1, p2 = cascade_forward(x, (w1, w2), (cfg1, cfg2))
        assert p1.shape == (3, 16, 16, 16)
        assert p2.shape == (3, 16, 16, 16)
        for p in (p1, p2):
            assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_stage2_sees_stage1_output(self, rng):
        # perturbing only the stage-1 head must move the stage-2 output
        cfg1, cfg2 = toy_cascade_configs()
        w1, w2 = init_params(cfg1, seed=1), init_params(cfg2, seed=2)
        x = rng.standard_normal((4, 16, 16, 16)).astype(np.float32)
        _, p2_base = cascade_forward(x, (w1, w2), (cfg1, cfg2))
        w1["head.bias"] = w1["head.bias"] + np.float32(0.5)
        p1_shift, p2_shift = cascade_forward(x, (w1, w2), (cfg1, cfg2))
        assert not np.array_equal(p2_base, p2_shift)
        assert np.max(np.abs(p2_base - p2_shift)) > 0.0
        assert p1_shift.shape == p2_shift.shape

    def test_narrow_first_stage_is_smaller(self):
        cfg1, cfg2 = toy_cascade_configs()
        assert param_count(cfg1) < param_count(cfg2)

    def test_channel_contract_enforced(self, rng):
        cfg1, _ = toy_cascade_configs()
        bad2 = toy_single_config(in_channels=6)
        w1 = init_params(cfg1, seed=1)
        w2 = init_params(bad2, seed=2)
        x = rng.standard_normal((4, 16, 16, 16)).astype(np.float32)
        with pytest.raises(ValueError, match="stage2"):
            cascade_forward(x, (w1, w2), (cfg1, bad2))


class TestCostModel:
    def test_flops_double_macs(self):
        config = toy_single_config()
        parts = macs_breakdown(config, (32, 32, 32))
        assert parts["total"] == parts["conv"] + parts["attention"]
        assert flops_estimate(config, (32, 32, 32)) == 2 * parts["total"]

    def test_macs_scale_with_volume(self):
        # all counted work is linear in voxels, so doubling every axis is x8
        config = toy_single_config()
        small = macs_breakdown(config, (16, 16, 16))
        large = macs_breakdown(config, (32, 32, 32))
        assert large["conv"] == 8 * small["conv"]
        assert large["attention"] == 8 * small["attention"]
        assert large["total"] == 8 * small["total"]

    def test_no_attention_macs_when_disabled(self):
        config = toy_single_config(ema_enabled=False)
        parts = macs_breakdown(config, (16, 16, 16))
        assert parts["attention"] == 0
        assert parts["conv"] > 0

    def test_pointwise_head_macs_by_hand(self):
        # 4 -> 3 channels over an 8x8x8 grid: 4*3*512 = 6144 MACs, 12288 FLOPs
        config = NetConfig(
            in_channels=2,
            stem_width=4,
            branch_widths=(4,),
            fusion_schedule=((1,),),
            blocks_per_branch=1,
            ema_enabled=False,
        )
        net = MultiScaleNet(config)
        macs, dims = net.head.macs((8, 8, 8))
        assert macs == net.head.spec.in_channels * 3 * 512
        assert dims == (8, 8, 8)

    def test_indivisible_dims_rejected(self):
        config = toy_single_config()
        with pytest.raises(ValueError, match="multiple of 16"):
            macs_breakdown(config, (16, 16, 20))
