"""Volume files: a raw little-endian blob next to a JSON sidecar header.

A volume at PATH is two files: PATH holds the voxel data, row-major with
the width axis fastest, and PATH.json describes it. The header carries
shape, dtype ("f32" image data or "u8" label maps), voxel spacing in mm,
and the axis order string, so a reader never has to guess. Writes go
through a temp file and os.replace, data first and header last, so a crash
cannot leave a header pointing at a truncated blob.

Converting from clinical formats is out of scope here; any NIfTI reader
can produce these files by dumping the array and writing the sidecar.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .validation import VALID_LABELS

FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _sidecar(path):
    return str(path) + ".json"


def _atomic_write(path, data: bytes):
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class Volume:
    """In-memory volume: float32 image data (3D or 4D) or uint8 labels (3D)."""

    data: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = self.data
        if arr.dtype == np.uint8:
            if arr.ndim != 3:
                raise ValueError(f"label volumes must be 3D, got {arr.ndim} axes")
            bad = set(np.unique(arr).tolist()) - VALID_LABELS
            if bad:
                raise ValueError(f"label volume contains invalid values: {sorted(bad)}")
        elif arr.dtype == np.float32:
            if arr.ndim not in (3, 4):
                raise ValueError(f"image volumes must be 3D or 4D, got {arr.ndim} axes")
        else:
            raise ValueError(f"volume dtype must be float32 or uint8, got {arr.dtype}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing_mm must be 3 positive floats, got {self.spacing_mm!r}")
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def spatial_dims(self):
        return self.data.shape[-3:]


def write_volume(path, data, *, spacing_mm=(1.0, 1.0, 1.0)):
    """Write data + sidecar atomically. dtype picks the on-disk format."""
    vol = data if isinstance(data, Volume) else Volume(np.asarray(data), spacing_mm)
    arr = vol.data
    kind = "u8" if arr.dtype == np.uint8 else "f32"
    axis_order = ("C,D,H,W" if arr.ndim == 4 else "D,H,W") + "; W fastest"
    header = {
        "format_version": FORMAT_VERSION,
        "shape": [int(d) for d in arr.shape],
        "dtype": kind,
        "spacing_mm": list(vol.spacing_mm),
        "axis_order": axis_order,
        "endianness": "little",
    }
    blob = np.ascontiguousarray(arr).astype(_DTYPES[kind], copy=False).tobytes()
    _atomic_write(path, blob)
    _atomic_write(_sidecar(path), json.dumps(header, indent=2).encode("utf-8") + b"\n")
    return str(path)


def read_volume(path) -> Volume:
    """Read a volume, validating the header against the blob byte-for-byte."""
    sidecar = _sidecar(path)
    if not os.path.exists(sidecar):
        raise ValueError(f"missing sidecar header {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"sidecar {sidecar} is not valid JSON: {exc}") from None
    for field in ("format_version", "shape", "dtype", "spacing_mm", "endianness"):
        if field not in header:
            raise ValueError(f"sidecar {sidecar} is missing required field {field!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported volume format_version {header['format_version']!r}")
    if header["endianness"] != "little":
        raise ValueError(f"unsupported endianness {header['endianness']!r}")
    kind = header["dtype"]
    if kind not in _DTYPES:
        raise ValueError(f"unsupported dtype {kind!r} (expected f32 or u8)")
    shape = tuple(int(d) for d in header["shape"])
    if len(shape) not in (3, 4) or any(d < 1 for d in shape):
        raise ValueError(f"invalid shape {shape} in {sidecar}")
    dtype = _DTYPES[kind]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise ValueError(
            f"{path}: blob holds {actual} bytes but header shape {shape} needs {expected}"
        )
    raw = np.fromfile(path, dtype=dtype).reshape(shape)
    if kind == "f32":
        data = raw.astype(np.float32, copy=False)
        if not np.isfinite(data).all():
            raise ValueError(f"{path}: image volume contains non-finite values")
    else:
        data = raw
    return Volume(data=data, spacing_mm=tuple(header["spacing_mm"]))
