"""Input validation helpers shared across the package.

Every public entry point funnels its array arguments through these so that
shape and dtype mistakes fail fast with a message naming the offending
argument instead of surfacing as a broadcast error three calls deeper.
"""

from __future__ import annotations

import numpy as np

VALID_LABELS = frozenset((0, 1, 2, 4))

AXIS_NAMES = ("depth", "height", "width")


def as_tensor4(x, *, channels=None, name="input"):
    """Coerce to a float32 array of shape (C, D, H, W).

    Args:
        x: array-like, 4 dims.
        channels: if given, required size of the leading axis.
        name: argument name used in error messages.
    """
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(
            f"{name} must have 4 axes (channels, depth, height, width), got {arr.ndim}"
        )
    if channels is not None and arr.shape[0] != channels:
        raise ValueError(
            f"{name} must have {channels} channels, got {arr.shape[0]}"
        )
    return arr


def as_volume3(x, *, name="volume"):
    """Coerce to a float32 array of shape (D, H, W)."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have 3 axes (depth, height, width), got {arr.ndim}")
    return arr


def as_label_map(x, *, name="labels"):
    """Coerce to a uint8 (D, H, W) label map restricted to {0, 1, 2, 4}."""
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have 3 axes, got {arr.ndim}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"{name} must be an integer array, got dtype {arr.dtype}")
        arr = arr.astype(np.uint8)
    bad = set(np.unique(arr).tolist()) - VALID_LABELS
    if bad:
        raise ValueError(f"{name} contains values outside {{0, 1, 2, 4}}: {sorted(bad)}")
    return arr


def as_bool_mask(x, *, shape=None, name="mask"):
    arr = np.asarray(x)
    if arr.dtype != bool:
        raise ValueError(f"{name} must be boolean, got dtype {arr.dtype}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_triple(value, *, name="dims", minimum=1):
    """Validate a length-3 tuple of ints, each >= minimum. Returns a tuple."""
    try:
        items = tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a triple of integers, got {value!r}") from None
    if len(items) != 3:
        raise ValueError(f"{name} must have exactly 3 entries, got {len(items)}")
    for axis, v in zip(AXIS_NAMES, items):
        if v < minimum:
            raise ValueError(f"{name}: {axis} must be >= {minimum}, got {v}")
    return items


def check_axes(axes, *, name="axes"):
    """Validate spatial axis indices: a sorted tuple drawn from {0, 1, 2}."""
    items = tuple(int(a) for a in axes)
    if len(set(items)) != len(items):
        raise ValueError(f"{name} must not repeat axes, got {axes!r}")
    for a in items:
        if a not in (0, 1, 2):
            raise ValueError(f"{name} entries must be in {{0, 1, 2}}, got {a}")
    return items


def check_probabilities(arr, *, name="probabilities", slack=0.0):
    """Reject arrays with entries outside [0 - slack, 1 + slack]."""
    lo = float(arr.min(initial=0.0))
    hi = float(arr.max(initial=1.0))
    if lo < -slack or hi > 1.0 + slack:
        raise ValueError(f"{name} must lie in [0, 1], got range [{lo}, {hi}]")
    return arr
