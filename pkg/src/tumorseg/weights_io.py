"""Weight files: one raw float32 blob plus a JSON manifest sidecar.

The manifest maps parameter names to shapes and byte offsets into the
blob, and carries the short hash of the config the weights were built for,
so a loader can refuse a mismatched config before running anything. The
blob is packed in sorted-name order, making files byte-reproducible for a
given parameter set. Cascade weights bundle both stages in one file under
"stage1." / "stage2." name prefixes.

Weight initialization lives here too: fresh stores are seeded per
parameter name, so adding or removing a layer never shifts any other
layer's draw.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .attention import normalize_columns
from .configs import NetConfig, config_hash
from .network import network_layout, validate_parameters
from .volume_io import _atomic_write, _sidecar

FORMAT_VERSION = 1

STAGE_PREFIXES = ("stage1.", "stage2.")


@dataclass
class WeightStore:
    """A named set of float32 parameter arrays with provenance fields."""

    params: dict
    config_hash: str | None = None
    seed: int | None = None

    def __post_init__(self):
        clean = {}
        for name, arr in self.params.items():
            a = np.asarray(arr, dtype=np.float32)
            if not np.isfinite(a).all():
                raise ValueError(f"parameter {name} contains non-finite values")
            clean[str(name)] = a
        self.params = clean

    def __len__(self):
        return len(self.params)

    def nbytes(self):
        return sum(a.nbytes for a in self.params.values())

    def content_hash(self) -> str:
        """sha256 over names, shapes and raw little-endian bytes, sorted by name."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            a = self.params[name]
            h.update(name.encode("utf-8"))
            h.update(repr(tuple(a.shape)).encode("utf-8"))
            h.update(np.ascontiguousarray(a).astype("<f4", copy=False).tobytes())
        return h.hexdigest()


def _stage_split(store: WeightStore):
    stages = {}
    for prefix in STAGE_PREFIXES:
        sub = {
            name[len(prefix):]: arr
            for name, arr in store.params.items()
            if name.startswith(prefix)
        }
        if sub:
            stages[prefix] = sub
    return stages


def split_cascade(store: WeightStore):
    """Break a bundled cascade store into its two per-stage stores."""
    stages = _stage_split(store)
    missing = [p for p in STAGE_PREFIXES if p not in stages]
    if missing:
        raise ValueError(f"cascade weights are missing parameters under {missing}")
    stray = [
        n for n in store.params if not n.startswith(STAGE_PREFIXES[0]) and not n.startswith(STAGE_PREFIXES[1])
    ]
    if stray:
        raise ValueError(f"cascade weights contain unprefixed parameters, first: {stray[:5]}")
    return tuple(
        WeightStore(params=stages[p], config_hash=store.config_hash, seed=store.seed)
        for p in STAGE_PREFIXES
    )


def combine_cascade(stage1: WeightStore, stage2: WeightStore, *, config_hash=None, seed=None):
    params = {f"stage1.{n}": a for n, a in stage1.params.items()}
    params.update({f"stage2.{n}": a for n, a in stage2.params.items()})
    return WeightStore(params=params, config_hash=config_hash, seed=seed)


# -- initialization ----------------------------------------------------------


def _param_rng(seed, name):
    # per-name stream: layout changes elsewhere never perturb this draw
    entropy = [int(seed)] + list(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def initialize_layout(layout, seed) -> dict:
    """Fill a name -> shape layout with fresh parameter values.

    Conv weights draw uniform in +-1/sqrt(fan_in); norm gains start at 1 and
    every shift/bias at 0; attention bases draw standard normal columns then
    normalize to unit length.
    """
    if int(seed) < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
    params = {}
    for name, shape in layout.items():
        shape = tuple(int(d) for d in shape)
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith((".shift", ".bias")):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".bases"):
            raw = _param_rng(seed, name).standard_normal(shape).astype(np.float32)
            params[name] = normalize_columns(raw)
        elif len(shape) == 5:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            draw = _param_rng(seed, name).uniform(-bound, bound, size=shape)
            params[name] = draw.astype(np.float32)
        else:
            raise ValueError(f"no initialization rule for layout entry {name} {shape}")
    return params


def init_single_store(config: NetConfig, seed) -> WeightStore:
    params = initialize_layout(network_layout(config), seed)
    return WeightStore(params=params, config_hash=config_hash(config), seed=int(seed))


def init_cascade_store(stage_configs, seed) -> WeightStore:
    """One bundled store for both stages, initialized under prefixed names."""
    cfg1, cfg2 = stage_configs
    layout = {f"stage1.{n}": s for n, s in network_layout(cfg1).items()}
    layout.update({f"stage2.{n}": s for n, s in network_layout(cfg2).items()})
    params = initialize_layout(layout, seed)
    return WeightStore(params=params, config_hash=config_hash((cfg1, cfg2)), seed=int(seed))


# -- file format -------------------------------------------------------------


def write_weights(path, store: WeightStore):
    """Write blob + manifest atomically; blob packs params sorted by name."""
    names = sorted(store.params)
    entries = {}
    chunks = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(store.params[name]).astype("<f4", copy=False)
        entries[name] = {"shape": [int(d) for d in arr.shape], "byte_offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": store.config_hash,
        "seed": store.seed,
        "params": entries,
    }
    _atomic_write(path, b"".join(chunks))
    _atomic_write(_sidecar(path), json.dumps(manifest, indent=1).encode("utf-8") + b"\n")
    return str(path)


def read_weights(path) -> WeightStore:
    """Read and validate a weight file: offsets in bounds, no overlaps,
    every value finite."""
    sidecar = _sidecar(path)
    if not os.path.exists(sidecar):
        raise ValueError(f"missing weight manifest {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"manifest {sidecar} is not valid JSON: {exc}") from None
    for fld in ("format_version", "params"):
        if fld not in manifest:
            raise ValueError(f"manifest {sidecar} is missing required field {fld!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported weights format_version {manifest['format_version']!r}")
    blob_size = os.path.getsize(path)
    spans = []
    for name, entry in manifest["params"].items():
        if "shape" not in entry or "byte_offset" not in entry:
            raise ValueError(f"manifest entry {name} must carry shape and byte_offset")
        shape = tuple(int(d) for d in entry["shape"])
        start = int(entry["byte_offset"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if start < 0 or start + nbytes > blob_size:
            raise ValueError(
                f"parameter {name} spans bytes [{start}, {start + nbytes}) outside the "
                f"{blob_size}-byte blob"
            )
        spans.append((start, start + nbytes, name))
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValueError(f"parameters {n0} and {n1} overlap in the blob")
    with open(path, "rb") as fh:
        blob = fh.read()
    params = {}
    for name, entry in manifest["params"].items():
        shape = tuple(int(d) for d in entry["shape"])
        start = int(entry["byte_offset"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        params[name] = arr.reshape(shape).astype(np.float32)
    seed = manifest.get("seed")
    return WeightStore(
        params=params,
        config_hash=manifest.get("config_hash"),
        seed=None if seed is None else int(seed),
    )


def check_config_match(store: WeightStore, config) -> None:
    """Reject a store whose recorded config hash disagrees with `config`.

    Stores without a recorded hash pass; layout validation still applies
    downstream.
    """
    if store.config_hash is None:
        return
    expected = config_hash(config)
    if store.config_hash != expected:
        raise ValueError(
            f"weights were built for config {store.config_hash} but the given "
            f"config hashes to {expected}"
        )


def validate_single_store(store: WeightStore, config: NetConfig):
    check_config_match(store, config)
    validate_parameters(store.params, config)


def validate_cascade_store(store: WeightStore, stage_configs):
    check_config_match(store, tuple(stage_configs))
    s1, s2 = split_cascade(store)
    validate_parameters(s1.params, stage_configs[0])
    validate_parameters(s2.params, stage_configs[1])
    return (s1, s2)
