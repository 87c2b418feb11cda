"""tumorseg: a forward-only brain tumor segmentation engine.

Dense 3D inference for multi-scale fusion networks with EM attention,
implemented directly on numpy. Covers the whole path from raw modality
volumes to merged label maps: intensity normalization, sliding-window
tiling with flip averaging, single and cascaded network families, region
thresholding, small-focus suppression, and label-wise family merging.
Training is out of scope; the loss and schedule definitions document the
recipe the weights come from.
"""

from .attention import EmaParams, e_step, em_attention, m_step
from .configs import (
    FamilyConfig,
    NetConfig,
    PipelineConfig,
    REGION_NAMES,
    builtin_family_config,
    config_hash,
    load_family_config,
    reference_cascade_configs,
    reference_single_config,
)
from .estimators import HybridSegmenter, VolumePreprocessor
from .fusion import (
    FuseWeights,
    FusionModuleWeights,
    ResidualBlockWeights,
    fuse,
    fusion_module_forward,
    residual_block,
)
from .losses import (
    ScheduleConfig,
    binary_cross_entropy,
    combined_loss,
    generalized_dice_loss,
    poly_lr,
)
from .metrics import dice_score, hd95, surface_voxels
from .network import (
    MultiScaleNet,
    cascade_forward,
    flops_estimate,
    macs_breakdown,
    network_layout,
    param_count,
    single_forward,
)
from .ops import (
    ConvSpec,
    activation,
    conv3d,
    flip,
    instance_norm,
    leaky_relu,
    pad_or_crop,
    sigmoid,
    softmax,
    trilinear_resize,
)
from .pipeline import (
    AugmentConfig,
    ModelEnsemble,
    PatchPlan,
    Study,
    augment,
    ensemble,
    family_probabilities,
    hybrid_merge,
    labels_to_regions,
    make_cascade_model,
    make_single_model,
    plan_patches,
    preprocess,
    regions_to_labels,
    run_study,
    run_volume,
    sliding_window_infer,
    suppress_small_enhancing,
    tta_variants,
)
from .volume_io import Volume, read_volume, write_volume
from .weights_io import (
    WeightStore,
    combine_cascade,
    init_cascade_store,
    init_single_store,
    read_weights,
    split_cascade,
    write_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "ConvSpec",
    "EmaParams",
    "FamilyConfig",
    "FuseWeights",
    "FusionModuleWeights",
    "HybridSegmenter",
    "ModelEnsemble",
    "MultiScaleNet",
    "NetConfig",
    "PatchPlan",
    "PipelineConfig",
    "REGION_NAMES",
    "ResidualBlockWeights",
    "ScheduleConfig",
    "Study",
    "Volume",
    "VolumePreprocessor",
    "WeightStore",
    "activation",
    "augment",
    "binary_cross_entropy",
    "builtin_family_config",
    "cascade_forward",
    "combine_cascade",
    "combined_loss",
    "config_hash",
    "conv3d",
    "dice_score",
    "e_step",
    "em_attention",
    "ensemble",
    "family_probabilities",
    "flip",
    "flops_estimate",
    "fuse",
    "fusion_module_forward",
    "generalized_dice_loss",
    "hd95",
    "hybrid_merge",
    "init_cascade_store",
    "init_single_store",
    "instance_norm",
    "labels_to_regions",
    "leaky_relu",
    "load_family_config",
    "m_step",
    "macs_breakdown",
    "make_cascade_model",
    "make_single_model",
    "network_layout",
    "pad_or_crop",
    "param_count",
    "plan_patches",
    "poly_lr",
    "preprocess",
    "read_volume",
    "read_weights",
    "reference_cascade_configs",
    "reference_single_config",
    "regions_to_labels",
    "residual_block",
    "run_study",
    "run_volume",
    "sigmoid",
    "single_forward",
    "sliding_window_infer",
    "softmax",
    "split_cascade",
    "suppress_small_enhancing",
    "surface_voxels",
    "tta_variants",
    "trilinear_resize",
    "write_volume",
    "write_weights",
]
