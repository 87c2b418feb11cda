import json

import pytest

from tumorseg.configs import (
    FamilyConfig,
    NetConfig,
    PipelineConfig,
    builtin_family_config,
    config_hash,
    load_family_config,
    reference_cascade_configs,
    reference_single_config,
    scaled_config,
)

from conftest import toy_single_config


class TestNetConfig:
    def test_reference_defaults(self):
        config = reference_single_config()
        assert config.in_channels == 4
        assert config.out_channels == 3
        assert config.max_scale == 4
        assert config.spatial_divisor == 16
        assert config.mixed_width == 32 + 64 + 128 + 256
        assert config.ema_width_effective == config.mixed_width // 2

    def test_cascade_reference_pair(self):
        stage1, stage2 = reference_cascade_configs()
        assert not stage1.ema_enabled
        assert stage1.width_multiplier < 1.0
        assert stage2.in_channels == stage1.in_channels + stage1.out_channels

    def test_width_multiplier_rounds_widths(self):
        config = toy_single_config(width_multiplier=0.5)
        assert config.stem_width_effective == 4
        assert [config.branch_width(s) for s in (1, 2, 3, 4)] == [4, 8, 16, 32]

    def test_width_never_rounds_to_zero(self):
        config = NetConfig(
            stem_width=1,
            branch_widths=(1,),
            fusion_schedule=((1,),),
            width_multiplier=0.01,
            ema_enabled=False,
        )
        assert config.stem_width_effective == 1
        assert config.branch_width(1) == 1

    def test_out_channels_fixed(self):
        with pytest.raises(ValueError, match="out_channels"):
            toy_single_config(out_channels=2)

    def test_schedule_must_be_contiguous(self):
        with pytest.raises(ValueError, match="contiguous"):
            toy_single_config(fusion_schedule=((1, 3),))

    def test_schedule_may_deepen_by_one(self):
        with pytest.raises(ValueError, match="at most one"):
            toy_single_config(fusion_schedule=((1, 2), (1, 2, 3, 4)))

    def test_schedule_needs_enough_widths(self):
        with pytest.raises(ValueError, match="branch widths"):
            toy_single_config(branch_widths=(8, 16), fusion_schedule=((1, 2), (1, 2, 3)))

    def test_multiplier_range(self):
        with pytest.raises(ValueError, match="width_multiplier"):
            toy_single_config(width_multiplier=1.5)

    def test_only_instance_norm_supported(self):
        with pytest.raises(ValueError, match="normalization"):
            toy_single_config(normalization="batch")

    def test_round_trip_dict(self):
        config = toy_single_config(width_multiplier=0.75)
        assert NetConfig.from_dict(config.to_dict()) == config

    def test_unknown_field_rejected(self):
        data = toy_single_config().to_dict()
        data["depth"] = 5
        with pytest.raises(ValueError, match="unknown network config fields"):
            NetConfig.from_dict(data)


class TestConfigHash:
    def test_stable_for_equal_configs(self):
        assert config_hash(toy_single_config()) == config_hash(toy_single_config())

    def test_sensitive_to_any_field(self):
        base = config_hash(toy_single_config())
        assert config_hash(toy_single_config(num_bases=4)) != base
        assert config_hash(toy_single_config(leaky_slope=0.02)) != base

    def test_cascade_pair_hash_is_ordered(self):
        stage1, stage2 = reference_cascade_configs()
        assert config_hash((stage1, stage2)) != config_hash((stage2, stage1))

    def test_short_hex_digest(self):
        digest = config_hash(toy_single_config())
        assert len(digest) == 16
        int(digest, 16)


class TestPipelineConfig:
    def test_reference_defaults(self):
        config = PipelineConfig()
        assert config.crop_dims == (224, 160, 155)
        assert config.patch_dims == (128, 128, 128)
        assert config.strides == (32, 32, 27)
        assert config.tta and config.tta_include_identity
        assert config.et_min_voxels_single == 300
        assert config.et_min_voxels_cascade == 500

    def test_threshold_range(self):
        with pytest.raises(ValueError, match="threshold"):
            PipelineConfig(threshold=1.0)

    def test_voxel_floors_nonnegative(self):
        with pytest.raises(ValueError, match="voxel"):
            PipelineConfig(et_min_voxels_single=-1)

    def test_round_trip_dict(self):
        config = PipelineConfig(crop_dims=(64, 64, 48), patch_dims=(32, 32, 32), strides=(16, 16, 16))
        assert PipelineConfig.from_dict(config.to_dict()) == config

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown pipeline config fields"):
            PipelineConfig.from_dict({"overlap": 0.5})


class TestFamilyConfig:
    def test_builtin_names(self):
        single = builtin_family_config("reference-single")
        assert single.family == "single" and single.single is not None and single.cascade is None
        cascade = builtin_family_config("reference-cascade")
        assert cascade.family == "cascade" and cascade.cascade is not None
        hybrid = builtin_family_config("reference-hybrid")
        assert hybrid.single is not None and hybrid.cascade is not None

    def test_load_builtin_by_name(self):
        assert load_family_config("reference-hybrid").family == "hybrid"

    def test_load_from_json_file(self, tmp_path):
        config = builtin_family_config("reference-single")
        path = tmp_path / "family.json"
        path.write_text(json.dumps(config.to_dict()))
        loaded = load_family_config(path)
        assert loaded == config

    def test_round_trip_hybrid(self):
        config = builtin_family_config("reference-hybrid")
        assert FamilyConfig.from_dict(config.to_dict()) == config

    def test_unknown_name_reports_builtins(self):
        with pytest.raises(ValueError, match="reference-single"):
            load_family_config("no-such-config")

    def test_stage_channel_contract(self):
        stage1, _ = reference_cascade_configs()
        bad2 = NetConfig(in_channels=5)
        with pytest.raises(ValueError, match="stage2"):
            FamilyConfig(family="cascade", cascade=(stage1, bad2))

    def test_family_requires_matching_configs(self):
        with pytest.raises(ValueError, match="requires"):
            FamilyConfig(family="single")

    def test_bad_family_name(self):
        with pytest.raises(ValueError, match="family"):
            FamilyConfig(family="quad", single=reference_single_config())


class TestScaledConfig:
    def test_overrides_multiplier_only(self):
        base = toy_single_config()
        scaled = scaled_config(base, 0.5)
        assert scaled.width_multiplier == 0.5
        assert scaled.branch_widths == base.branch_widths
