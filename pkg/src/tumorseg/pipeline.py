"""Whole-study inference: preprocessing, tiling, flip averaging, labeling.

The flow for one study is fixed:

  z-scored modalities -> center crop to the working frame
    -> sliding-window patches, each averaged over flip variants
    -> per-family probability averaging across model snapshots
    -> region probabilities thresholded into labels
    -> small-focus enhancing-tumor suppression
    -> label-wise merge across families
    -> paste back into the original frame

Every stage is a pure function here so each one can be tested against a
hand oracle in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .configs import PipelineConfig
from .network import MultiScaleNet, cascade_forward
from .ops import center_span, flip, pad_or_crop
from .validation import (
    as_bool_mask,
    as_label_map,
    as_tensor4,
    as_volume3,
    check_probabilities,
    check_triple,
)

MODALITY_NAMES = ("t1", "t1ce", "t2", "flair")

LABEL_NCR_NET = 1  # necrotic core / non-enhancing tumor
LABEL_EDEMA = 2
LABEL_ENHANCING = 4


@dataclass(frozen=True)
class Study:
    """One subject's four co-registered modalities plus a brain mask.

    If no mask is given, a voxel belongs to the brain when any modality is
    nonzero there (skull-stripped inputs are zero outside the brain).
    """

    t1: np.ndarray
    t1ce: np.ndarray
    t2: np.ndarray
    flair: np.ndarray
    brain_mask: np.ndarray | None = None
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vols = {}
        for name in MODALITY_NAMES:
            vols[name] = as_volume3(getattr(self, name), name=name)
            object.__setattr__(self, name, vols[name])
        dims = vols["t1"].shape
        for name, v in vols.items():
            if v.shape != dims:
                raise ValueError(f"modality {name} has dims {v.shape}, t1 has {dims}")
        if self.brain_mask is None:
            stacked = np.stack(list(vols.values()))
            object.__setattr__(self, "brain_mask", np.any(stacked != 0, axis=0))
        else:
            object.__setattr__(
                self, "brain_mask", as_bool_mask(self.brain_mask, shape=dims, name="brain_mask")
            )
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing_mm must be 3 positive floats, got {self.spacing_mm!r}")
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def frame_dims(self):
        return self.t1.shape

    def modalities(self):
        return tuple(getattr(self, name) for name in MODALITY_NAMES)


def preprocess(study: Study, *, clip_percentiles=(0.5, 99.5)):
    """Per-modality percentile clip and z-score over brain voxels.

    Percentiles and moments are computed over brain voxels only (float64,
    linear-interpolation percentiles); background voxels come out exactly 0.
    A modality with no intensity spread inside the brain is rejected rather
    than silently divided by ~0.
    """
    lo_q, hi_q = (float(p) for p in clip_percentiles)
    if not (0.0 <= lo_q < hi_q <= 100.0):
        raise ValueError(f"clip percentiles must satisfy 0 <= lo < hi <= 100, got {clip_percentiles!r}")
    mask = study.brain_mask
    if not mask.any():
        raise ValueError("brain mask is empty; nothing to normalize")
    out = np.zeros((len(MODALITY_NAMES),) + study.frame_dims, dtype=np.float32)
    for idx, vol in enumerate(study.modalities()):
        vals = vol[mask].astype(np.float64)
        lo, hi = np.percentile(vals, (lo_q, hi_q))
        clipped = np.clip(vals, lo, hi)
        std = clipped.std()
        if std <= 0.0:
            raise ValueError(
                f"modality {MODALITY_NAMES[idx]} has zero intensity spread inside the brain"
            )
        out[idx][mask] = ((clipped - clipped.mean()) / std).astype(np.float32)
    return out


# -- tiling ------------------------------------------------------------------


def _axis_origins(length, patch, stride):
    if patch > length:
        raise ValueError(f"patch extent {patch} exceeds volume extent {length}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride > patch:
        # edge snapping fixes the far boundary, but an over-long stride
        # would still leave uncovered voxels between windows
        raise ValueError(f"stride {stride} exceeds patch extent {patch}, leaving coverage gaps")
    origins = list(range(0, length - patch + 1, stride))
    last = length - patch
    if origins[-1] != last:
        origins.append(last)  # final window snaps to the far edge
    return origins


@dataclass(frozen=True)
class PatchPlan:
    crop_dims: tuple
    patch_dims: tuple
    strides: tuple
    positions: tuple

    def __len__(self):
        return len(self.positions)


def plan_patches(crop_dims, patch_dims, strides) -> PatchPlan:
    """Origins of a full tiling: regular grid plus an edge-snapped final row
    per axis, so every voxel is covered by at least one patch."""
    crop = check_triple(crop_dims, name="crop_dims")
    patch = check_triple(patch_dims, name="patch_dims")
    steps = check_triple(strides, name="strides")
    axes = [_axis_origins(c, p, s) for c, p, s in zip(crop, patch, steps)]
    positions = tuple(
        (d, h, w) for d in axes[0] for h in axes[1] for w in axes[2]
    )
    return PatchPlan(crop_dims=crop, patch_dims=patch, strides=steps, positions=positions)


def tta_variants():
    """All 8 spatial flip combinations, identity first."""
    return ((), (0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2))


def sliding_window_infer(model, volume, plan: PatchPlan, *, tta=True, include_identity=True):
    """Average model outputs over overlapping patches and flip variants.

    Args:
        model: callable mapping a (C, pd, ph, pw) patch to (C', pd, ph, pw)
            probabilities. Outputs with any other spatial shape are rejected.
        volume: (C,) + plan.crop_dims input.
        tta: average each patch over flip variants (model applied to the
            flipped patch, output flipped back) instead of just identity.
        include_identity: with tta, whether the identity variant joins the
            average (7 mirrored variants otherwise).

    Accumulation runs in float64 in a fixed order: patches by position
    index, variants innermost. Every voxel is covered by construction, so
    the final divide is safe.
    """
    volume = as_tensor4(volume, name="sliding window input")
    if volume.shape[1:] != plan.crop_dims:
        raise ValueError(
            f"volume dims {volume.shape[1:]} do not match plan crop dims {plan.crop_dims}"
        )
    if tta:
        variants = tta_variants() if include_identity else tta_variants()[1:]
    else:
        variants = ((),)
    pd, ph, pw = plan.patch_dims
    sums = None
    counts = np.zeros(plan.crop_dims, dtype=np.float64)
    for (d, h, w) in plan.positions:
        patch = volume[:, d : d + pd, h : h + ph, w : w + pw]
        for axes in variants:
            pred = model(flip(patch, axes))
            pred = np.asarray(pred, dtype=np.float32)
            if pred.ndim != 4 or pred.shape[1:] != (pd, ph, pw):
                raise ValueError(
                    f"model output shape {pred.shape} does not match patch dims {(pd, ph, pw)}"
                )
            pred = flip(pred, axes)
            if sums is None:
                sums = np.zeros((pred.shape[0],) + plan.crop_dims, dtype=np.float64)
            elif pred.shape[0] != sums.shape[0]:
                raise ValueError("model changed its output channel count between patches")
            sums[:, d : d + pd, h : h + ph, w : w + pw] += pred
            counts[d : d + pd, h : h + ph, w : w + pw] += 1.0
    return (sums / counts).astype(np.float32)


def ensemble(members):
    """Mean probability across model outputs of identical shape."""
    members = [np.asarray(m, dtype=np.float32) for m in members]
    if not members:
        raise ValueError("ensemble needs at least one member")
    shape = members[0].shape
    for i, m in enumerate(members):
        if m.shape != shape:
            raise ValueError(f"ensemble member {i} has shape {m.shape}, expected {shape}")
    if len(members) == 1:
        return members[0].copy()
    acc = np.zeros(shape, dtype=np.float64)
    for m in members:
        acc += m
    return (acc / len(members)).astype(np.float32)


# -- labels ------------------------------------------------------------------


def regions_to_labels(probs, *, threshold=0.5):
    """Collapse nested-region probabilities (WT, TC, ET) into labels.

    Precedence runs inside-out: enhancing tumor wins, then tumor core,
    then whole tumor (edema).
    """
    probs = as_tensor4(probs, channels=3, name="region probabilities")
    check_probabilities(probs, name="region probabilities", slack=1e-5)
    wt, tc, et = probs[0] > threshold, probs[1] > threshold, probs[2] > threshold
    labels = np.zeros(probs.shape[1:], dtype=np.uint8)
    labels[wt] = LABEL_EDEMA
    labels[tc] = LABEL_NCR_NET
    labels[et] = LABEL_ENHANCING
    return labels


def labels_to_regions(labels):
    """Inverse nesting: WT = any tumor, TC = {1, 4}, ET = {4}. Returns bools."""
    lab = as_label_map(labels)
    wt = lab != 0
    tc = (lab == LABEL_NCR_NET) | (lab == LABEL_ENHANCING)
    et = lab == LABEL_ENHANCING
    return np.stack([wt, tc, et])


def suppress_small_enhancing(labels, *, min_voxels):
    """Relabel all enhancing tumor to necrotic core when its total voxel
    count falls strictly below min_voxels (tiny foci are usually artifacts)."""
    lab = as_label_map(labels).copy()
    if min_voxels < 0:
        raise ValueError(f"min_voxels must be >= 0, got {min_voxels}")
    et = lab == LABEL_ENHANCING
    if 0 < int(et.sum()) < int(min_voxels):
        lab[et] = LABEL_NCR_NET
    return lab


def hybrid_merge(single_labels, cascaded_labels):
    """Label-wise merge of the two families.

    Edema comes from the single-network family, necrotic core from the
    cascade, enhancing tumor from the single family; enhancing wins where
    they overlap.
    """
    a = as_label_map(single_labels, name="single labels")
    b = as_label_map(cascaded_labels, name="cascaded labels")
    if a.shape != b.shape:
        raise ValueError(f"label map dims differ: {a.shape} vs {b.shape}")
    out = np.zeros_like(a)
    out[a == LABEL_EDEMA] = LABEL_EDEMA
    out[b == LABEL_NCR_NET] = LABEL_NCR_NET
    out[a == LABEL_ENHANCING] = LABEL_ENHANCING
    return out


# -- training-time augmentation (reference implementation) -------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Random flip / rotate / intensity jitter, as used to train weights."""

    flip_axes: tuple = (0, 1, 2)
    flip_probability: float = 0.5
    rotation_degrees: tuple = (10.0, 10.0, 10.0)
    intensity_shift: float = 0.1
    intensity_scale: tuple = (0.9, 1.1)

    def __post_init__(self):
        object.__setattr__(self, "flip_axes", tuple(int(a) for a in self.flip_axes))
        degs = tuple(float(d) for d in self.rotation_degrees)
        if len(degs) != 3 or any(d < 0 for d in degs):
            raise ValueError(f"rotation_degrees must be 3 magnitudes >= 0, got {degs}")
        if any(d > 30.0 for d in degs):
            raise ValueError(f"rotation magnitudes above 30 degrees are not supported, got {degs}")
        object.__setattr__(self, "rotation_degrees", degs)
        if not (0.0 <= self.flip_probability <= 1.0):
            raise ValueError(f"flip_probability must be in [0, 1], got {self.flip_probability}")
        if self.intensity_shift < 0:
            raise ValueError(f"intensity_shift must be >= 0, got {self.intensity_shift}")
        lo, hi = (float(s) for s in self.intensity_scale)
        if not (0.0 < lo <= hi):
            raise ValueError(f"intensity_scale must be 0 < lo <= hi, got {self.intensity_scale!r}")
        object.__setattr__(self, "intensity_scale", (lo, hi))


_ROTATION_PLANES = ((1, 2), (1, 3), (2, 3))  # array axes per rotation angle


def augment(x, config: AugmentConfig, seed):
    """Apply one random draw of the training augmentations to a (C, D, H, W)
    tensor. All randomness comes from `seed` in a fixed draw order, so the
    same seed reproduces the same transform bit for bit."""
    x = as_tensor4(x, name="augment input")
    rng = np.random.default_rng(int(seed))
    flips = tuple(a for a in config.flip_axes if rng.random() < config.flip_probability)
    angles = [rng.uniform(-d, d) if d > 0 else 0.0 for d in config.rotation_degrees]
    channels = x.shape[0]
    if config.intensity_shift > 0:
        shifts = rng.uniform(-config.intensity_shift, config.intensity_shift, size=channels)
    else:
        shifts = np.zeros(channels)
    lo, hi = config.intensity_scale
    scales = rng.uniform(lo, hi, size=channels) if hi > lo else np.full(channels, lo)

    out = flip(x, flips)
    for angle, plane in zip(angles, _ROTATION_PLANES):
        if angle != 0.0:
            out = ndimage.rotate(
                out, angle, axes=plane, reshape=False, order=1, mode="constant", cval=0.0
            ).astype(np.float32)
    stds = out.std(axis=(1, 2, 3), dtype=np.float64)
    out = out + (shifts * stds).astype(np.float32)[:, None, None, None]
    out = out * scales.astype(np.float32)[:, None, None, None]
    return out


# -- model plumbing -----------------------------------------------------------


def make_single_model(store, config):
    """Wrap a validated single-network weight store as a patch callable."""
    from .weights_io import validate_single_store

    validate_single_store(store, config)
    net = MultiScaleNet(config)
    params = store.params

    def model(patch):
        return net.forward(params, patch)

    return model


def make_cascade_model(store, stage_configs):
    """Wrap a bundled cascade store as a patch callable (stage-2 output)."""
    from .weights_io import validate_cascade_store

    s1, s2 = validate_cascade_store(store, stage_configs)

    def model(patch):
        _, p2 = cascade_forward(patch, (s1, s2), stage_configs)
        return p2

    return model


@dataclass(frozen=True)
class ModelEnsemble:
    """Patch-level callables grouped by family. Each entry is one trained
    snapshot; probabilities are averaged within a family before labeling."""

    single: tuple = ()
    cascade: tuple = ()

    def __post_init__(self):
        if not self.single and not self.cascade:
            raise ValueError("model ensemble is empty: provide single and/or cascade models")


def _uncrop(arr, frame_dims, *, fill=0):
    """Inverse of the center crop: paste crop-frame data back into the
    original frame, trimming any padding that the crop step added."""
    frame = tuple(frame_dims)
    spatial = arr.shape[-3:]
    out = np.full(arr.shape[:-3] + frame, fill, dtype=arr.dtype)
    spans = [center_span(f, c) for f, c in zip(frame, spatial)]
    frame_sl = tuple(slice(lo, lo + n) for lo, _, n in spans)
    crop_sl = tuple(slice(lo, lo + n) for _, lo, n in spans)
    out[(...,) + frame_sl] = arr[(...,) + crop_sl]
    return out


def _family_probs(models, crop, plan, config: PipelineConfig):
    outputs = [
        sliding_window_infer(
            m, crop, plan, tta=config.tta, include_identity=config.tta_include_identity
        )
        for m in models
    ]
    return ensemble(outputs)


def run_volume(volume, models: ModelEnsemble, config: PipelineConfig = PipelineConfig()):
    """Full inference on a preprocessed 4-channel volume; labels in the
    volume's own frame."""
    volume = as_tensor4(volume, name="preprocessed volume")
    frame_dims = volume.shape[1:]
    crop = pad_or_crop(volume, config.crop_dims)
    plan = plan_patches(config.crop_dims, config.patch_dims, config.strides)

    family_labels = {}
    if models.single:
        probs = _family_probs(models.single, crop, plan, config)
        labels = regions_to_labels(probs, threshold=config.threshold)
        family_labels["single"] = suppress_small_enhancing(
            labels, min_voxels=config.et_min_voxels_single
        )
    if models.cascade:
        probs = _family_probs(models.cascade, crop, plan, config)
        labels = regions_to_labels(probs, threshold=config.threshold)
        family_labels["cascade"] = suppress_small_enhancing(
            labels, min_voxels=config.et_min_voxels_cascade
        )

    if len(family_labels) == 2:
        merged = hybrid_merge(family_labels["single"], family_labels["cascade"])
    else:
        (merged,) = family_labels.values()
    return _uncrop(merged, frame_dims, fill=0)


def run_study(study: Study, models: ModelEnsemble, config: PipelineConfig = PipelineConfig()):
    """preprocess + run_volume; labels come back in the study's frame."""
    volume = preprocess(study, clip_percentiles=config.clip_percentiles)
    return run_volume(volume, models, config)


def family_probabilities(volume, models: ModelEnsemble, config: PipelineConfig = PipelineConfig()):
    """Per-family ensembled probabilities pasted back into the input frame.

    Voxels the working crop never saw keep probability 0.
    """
    volume = as_tensor4(volume, name="preprocessed volume")
    frame_dims = volume.shape[1:]
    crop = pad_or_crop(volume, config.crop_dims)
    plan = plan_patches(config.crop_dims, config.patch_dims, config.strides)
    out = {}
    for name, members in (("single", models.single), ("cascade", models.cascade)):
        if members:
            probs = _family_probs(members, crop, plan, config)
            out[name] = _uncrop(probs, frame_dims, fill=np.float32(0.0))
    return out
