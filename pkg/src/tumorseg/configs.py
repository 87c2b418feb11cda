"""Configuration objects and their JSON wire form.

NetConfig fixes everything needed to rebuild a network's parameter layout;
PipelineConfig fixes the whole-volume inference procedure. Both serialize
to plain JSON dicts so a run can be reproduced from its config file, and
NetConfig dicts hash to a short digest that weight files embed to detect
config/weight mismatches.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .validation import check_triple

REGION_NAMES = ("WT", "TC", "ET")  # channel order of every probability tensor


def _as_int_tuple(value, name):
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a sequence of integers, got {value!r}") from None


@dataclass(frozen=True)
class NetConfig:
    """Structure of one multi-scale fusion network.

    branch_widths[s - 1] is the channel width of scale s before the width
    multiplier; fusion_schedule lists, per fusion module, the scale set that
    module outputs. Input to the first module is always scale 1 (the stem
    runs at full resolution and a strided transition makes scale 1).
    """

    in_channels: int = 4
    out_channels: int = 3
    stem_width: int = 32
    branch_widths: tuple = (32, 64, 128, 256)
    fusion_schedule: tuple = ((1, 2), (1, 2, 3), (1, 2, 3, 4), (1, 2, 3, 4))
    blocks_per_branch: int = 2
    ema_enabled: bool = True
    ema_width: int | None = None
    num_bases: int = 256
    em_iterations: int = 3
    width_multiplier: float = 1.0
    normalization: str = "instance"
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.out_channels != 3:
            raise ValueError(
                f"out_channels is fixed at 3 (one sigmoid per nested region), got {self.out_channels}"
            )
        if self.stem_width < 1:
            raise ValueError(f"stem_width must be >= 1, got {self.stem_width}")
        object.__setattr__(self, "branch_widths", _as_int_tuple(self.branch_widths, "branch_widths"))
        if any(w < 1 for w in self.branch_widths):
            raise ValueError(f"branch_widths must be positive, got {self.branch_widths}")
        schedule = tuple(_as_int_tuple(step, "fusion_schedule step") for step in self.fusion_schedule)
        object.__setattr__(self, "fusion_schedule", schedule)
        if not schedule:
            raise ValueError("fusion_schedule must contain at least one module")
        prev = (1,)
        for step in schedule:
            if list(step) != sorted(set(step)) or step[0] != 1 or step != tuple(range(1, len(step) + 1)):
                raise ValueError(f"each schedule step must be contiguous scales from 1, got {step}")
            if not set(prev).issubset(step) or len(step) > len(prev) + 1:
                raise ValueError(
                    f"schedule may deepen by at most one scale per module: {prev} -> {step}"
                )
            prev = step
        if self.max_scale > len(self.branch_widths):
            raise ValueError(
                f"schedule reaches scale {self.max_scale} but only "
                f"{len(self.branch_widths)} branch widths are given"
            )
        if self.blocks_per_branch < 1:
            raise ValueError(f"blocks_per_branch must be >= 1, got {self.blocks_per_branch}")
        if not (0.0 < self.width_multiplier <= 1.0):
            raise ValueError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.ema_enabled:
            if self.num_bases < 1:
                raise ValueError(f"num_bases must be >= 1, got {self.num_bases}")
            if self.em_iterations < 1:
                raise ValueError(f"em_iterations must be >= 1, got {self.em_iterations}")
            if self.ema_width is not None and self.ema_width < 1:
                raise ValueError(f"ema_width must be >= 1, got {self.ema_width}")
        if self.normalization != "instance":
            raise ValueError(f"unsupported normalization {self.normalization!r}")
        if self.activation != "leaky_relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.leaky_slope < 0:
            raise ValueError(f"leaky_slope must be >= 0, got {self.leaky_slope}")
        if self.norm_eps <= 0:
            raise ValueError(f"norm_eps must be positive, got {self.norm_eps}")

    # -- derived structure ------------------------------------------------

    @property
    def max_scale(self):
        return max(len(step) for step in self.fusion_schedule)

    @property
    def spatial_divisor(self):
        """Input dims must be divisible by this (one halving per scale level)."""
        return 1 << self.max_scale

    def _scaled(self, width):
        return max(1, int(round(width * self.width_multiplier)))

    @property
    def stem_width_effective(self):
        return self._scaled(self.stem_width)

    def branch_width(self, scale):
        return self._scaled(self.branch_widths[scale - 1])

    @property
    def final_scales(self):
        return self.fusion_schedule[-1]

    @property
    def mixed_width(self):
        """Channel count after the deep branches are recovered and concatenated."""
        return sum(self.branch_width(s) for s in self.final_scales)

    @property
    def ema_width_effective(self):
        if self.ema_width is not None:
            return self.ema_width
        return max(1, self.mixed_width // 2)

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValueError(f"network config must be a JSON object, got {type(data).__name__}")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown network config fields: {sorted(unknown)}")
        return cls(**data)


def config_hash(config) -> str:
    """First 16 hex chars of sha256 over the canonical JSON form.

    Accepts a NetConfig, a pair of them (cascade stages), or a plain dict.
    """
    if isinstance(config, NetConfig):
        payload = config.to_dict()
    elif isinstance(config, (tuple, list)):
        stage1, stage2 = config
        payload = {"stage1": stage1.to_dict(), "stage2": stage2.to_dict()}
    else:
        payload = dict(config)
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class PipelineConfig:
    """Whole-volume inference procedure parameters."""

    crop_dims: tuple = (224, 160, 155)
    patch_dims: tuple = (128, 128, 128)
    strides: tuple = (32, 32, 27)
    tta: bool = True
    tta_include_identity: bool = True
    threshold: float = 0.5
    et_min_voxels_single: int = 300
    et_min_voxels_cascade: int = 500
    clip_percentiles: tuple = (0.5, 99.5)

    def __post_init__(self):
        object.__setattr__(self, "crop_dims", check_triple(self.crop_dims, name="crop_dims"))
        object.__setattr__(self, "patch_dims", check_triple(self.patch_dims, name="patch_dims"))
        object.__setattr__(self, "strides", check_triple(self.strides, name="strides"))
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.et_min_voxels_single < 0 or self.et_min_voxels_cascade < 0:
            raise ValueError("minimum voxel thresholds must be >= 0")
        lo, hi = (float(p) for p in self.clip_percentiles)
        if not (0.0 <= lo < hi <= 100.0):
            raise ValueError(f"clip_percentiles must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})")
        object.__setattr__(self, "clip_percentiles", (lo, hi))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config fields: {sorted(unknown)}")
        return cls(**data)


# -- reference factories ----------------------------------------------------


def reference_single_config() -> NetConfig:
    """The full-width single network: 4 input modalities, EM attention on."""
    return NetConfig()


def reference_cascade_configs() -> tuple:
    """Two-stage cascade: a slimmed first stage without attention, then a
    full second stage that also sees the first stage's three region maps."""
    stage1 = NetConfig(ema_enabled=False, width_multiplier=0.75)
    stage2 = NetConfig(in_channels=7)
    return (stage1, stage2)


FAMILY_SINGLE = "single"
FAMILY_CASCADE = "cascade"
FAMILY_HYBRID = "hybrid"

_BUILTIN_FAMILIES = {
    "reference-single": FAMILY_SINGLE,
    "reference-cascade": FAMILY_CASCADE,
    "reference-hybrid": FAMILY_HYBRID,
}


@dataclass(frozen=True)
class FamilyConfig:
    """A model family selection: which networks run and with what structure."""

    family: str
    single: NetConfig | None = None
    cascade: tuple | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.family not in (FAMILY_SINGLE, FAMILY_CASCADE, FAMILY_HYBRID):
            raise ValueError(
                f"family must be one of single, cascade, hybrid; got {self.family!r}"
            )
        if self.family in (FAMILY_SINGLE, FAMILY_HYBRID) and self.single is None:
            raise ValueError(f"family {self.family!r} requires a 'single' network config")
        if self.family in (FAMILY_CASCADE, FAMILY_HYBRID) and self.cascade is None:
            raise ValueError(f"family {self.family!r} requires a 'cascade' stage pair")
        if self.cascade is not None:
            stage1, stage2 = self.cascade
            expected = stage1.in_channels + stage1.out_channels
            if stage2.in_channels != expected:
                raise ValueError(
                    f"cascade stage2 must take {expected} channels "
                    f"(stage1 input + stage1 regions), got {stage2.in_channels}"
                )

    def to_dict(self):
        out = {"format_version": 1, "family": self.family}
        if self.single is not None:
            out["single"] = self.single.to_dict()
        if self.cascade is not None:
            out["cascade"] = {
                "stage1": self.cascade[0].to_dict(),
                "stage2": self.cascade[1].to_dict(),
            }
        out["pipeline"] = self.pipeline.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValueError("config file must contain a JSON object")
        version = data.get("format_version", 1)
        if version != 1:
            raise ValueError(f"unsupported config format_version {version!r}")
        if "family" not in data:
            raise ValueError("config file is missing the 'family' field")
        single = NetConfig.from_dict(data["single"]) if "single" in data else None
        cascade = None
        if "cascade" in data:
            pair = data["cascade"]
            if not isinstance(pair, dict) or set(pair) != {"stage1", "stage2"}:
                raise ValueError("'cascade' must be an object with stage1 and stage2")
            cascade = (NetConfig.from_dict(pair["stage1"]), NetConfig.from_dict(pair["stage2"]))
        pipeline = (
            PipelineConfig.from_dict(data["pipeline"]) if "pipeline" in data else PipelineConfig()
        )
        return cls(family=data["family"], single=single, cascade=cascade, pipeline=pipeline)


def builtin_family_config(name) -> FamilyConfig:
    family = _BUILTIN_FAMILIES[name]
    single = reference_single_config() if family in (FAMILY_SINGLE, FAMILY_HYBRID) else None
    cascade = reference_cascade_configs() if family in (FAMILY_CASCADE, FAMILY_HYBRID) else None
    return FamilyConfig(family=family, single=single, cascade=cascade)


def load_family_config(path_or_name) -> FamilyConfig:
    """Resolve a config argument: a builtin name or a JSON file path."""
    name = str(path_or_name)
    if name in _BUILTIN_FAMILIES:
        return builtin_family_config(name)
    try:
        with open(name, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ValueError(
            f"config {name!r} is neither a builtin name ({', '.join(sorted(_BUILTIN_FAMILIES))}) "
            f"nor a readable file"
        ) from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {name!r} is not valid JSON: {exc}") from None
    return FamilyConfig.from_dict(data)


def scaled_config(config: NetConfig, multiplier: float) -> NetConfig:
    return replace(config, width_multiplier=multiplier)
