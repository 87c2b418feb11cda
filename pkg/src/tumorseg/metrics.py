"""Overlap and surface-distance metrics for binary masks.

Both metrics treat a mask as a set of voxels on an axis-aligned grid with
an optional physical spacing per axis.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _as_mask(x, name):
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a 3D mask, got {arr.ndim} axes")
    if arr.dtype != bool:
        vals = np.unique(arr)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError(f"{name} must be binary, found values {vals[:5]}")
        arr = arr.astype(bool)
    return arr


def dice_score(pred, truth) -> float:
    """2|A and B| / (|A| + |B|); two empty masks agree perfectly (1.0)."""
    p = _as_mask(pred, "pred")
    g = _as_mask(truth, "truth")
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    overlap = int(np.logical_and(p, g).sum())
    return 2.0 * overlap / total


def surface_voxels(mask):
    """Boolean map of mask voxels with at least one 6-connected neighbor
    outside the mask; the volume boundary counts as outside."""
    m = _as_mask(mask, "mask")
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return m & ~interior


def _surface_points(mask, spacing):
    coords = np.argwhere(surface_voxels(mask)).astype(np.float64)
    return coords * np.asarray(spacing, dtype=np.float64)


def hd95(pred, truth, *, spacing_mm=(1.0, 1.0, 1.0)) -> float:
    """Symmetric 95th-percentile surface distance in physical units.

    Each direction takes the 95th percentile (linear interpolation) of
    nearest-surface distances; the result is the larger of the two. Both
    masks must be nonempty: the distance is undefined otherwise and callers
    that need a sentinel must apply their own.
    """
    p = _as_mask(pred, "pred")
    g = _as_mask(truth, "truth")
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    spacing = tuple(float(s) for s in spacing_mm)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing_mm must be 3 positive floats, got {spacing_mm!r}")
    if not p.any() or not g.any():
        raise ValueError("hd95 is undefined for an empty mask")
    sp = _surface_points(p, spacing)
    sg = _surface_points(g, spacing)
    d_pg, _ = cKDTree(sg).query(sp, k=1)
    d_gp, _ = cKDTree(sp).query(sg, k=1)
    forward = float(np.percentile(d_pg, 95))
    backward = float(np.percentile(d_gp, 95))
    return max(forward, backward)
