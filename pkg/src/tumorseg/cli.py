"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad inputs,
mismatched files), 3 runtime failure. Every failure prints exactly one
diagnostic line to stderr, prefixed "tumorseg: <category> error:", so
wrappers can parse outcomes without scraping free text.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .configs import (
    FAMILY_CASCADE,
    FAMILY_HYBRID,
    FAMILY_SINGLE,
    FamilyConfig,
    PipelineConfig,
    load_family_config,
)
from .metrics import dice_score, hd95
from .network import flops_estimate, macs_breakdown, param_count
from .pipeline import (
    ModelEnsemble,
    Study,
    labels_to_regions,
    make_cascade_model,
    make_single_model,
    run_volume,
)
from .pipeline import preprocess as preprocess_study
from .volume_io import _atomic_write, read_volume, write_volume
from .weights_io import init_cascade_store, init_single_store, read_weights, write_weights

# Cost targets for the reference configs: published figures for the
# architecture these configs reproduce, used only for reporting deltas.
REFERENCE_COSTS = {
    "single": {"params_m": 16.85, "flops_g": 436.59, "params_band_m": (12.0, 22.0)},
    "cascaded": {"params_m": 26.07, "flops_g": 621.09, "params_band_m": (18.0, 33.0)},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tumorseg",
        description="Forward-only brain tumor segmentation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize four modalities into one 4-channel volume")
    for name in ("t1", "t1ce", "t2", "flair"):
        p.add_argument(f"--{name}", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument(
        "--clip", nargs=2, type=float, default=(0.5, 99.5), metavar=("LO", "HI"),
        help="percentile clipping window over brain voxels (default 0.5 99.5)",
    )

    p = sub.add_parser("infer", help="segment a preprocessed 4-channel volume")
    p.add_argument("--input", required=True, metavar="PATH", help="preprocessed volume file")
    p.add_argument(
        "--weights", action="append", required=True, metavar="FAMILY:PATH",
        help="weight file tagged single: or cascade:; repeat for ensembles",
    )
    p.add_argument("--config", required=True, metavar="NAME_OR_PATH",
                   help="builtin config name or JSON config file")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--no-tta", action="store_true", help="disable flip averaging")
    p.add_argument("--et-threshold-single", type=int, default=None, metavar="N",
                   help="minimum enhancing-tumor voxels for the single family (default 300)")
    p.add_argument("--et-threshold-cascade", type=int, default=None, metavar="N",
                   help="minimum enhancing-tumor voxels for the cascade family (default 500)")
    p.add_argument("--crop", nargs=3, type=int, default=None, metavar=("D", "H", "W"),
                   help="override the working crop dims")
    p.add_argument("--patch", nargs=3, type=int, default=None, metavar=("D", "H", "W"),
                   help="override the sliding-window patch dims")
    p.add_argument("--strides", nargs=3, type=int, default=None, metavar=("D", "H", "W"),
                   help="override the sliding-window strides")

    p = sub.add_parser("evaluate", help="score a predicted label map against ground truth")
    p.add_argument("--pred", required=True, metavar="PATH")
    p.add_argument("--gt", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH", help="CSV report path")

    p = sub.add_parser("init-weights", help="write freshly initialized weights")
    p.add_argument("--config", required=True, metavar="NAME_OR_PATH")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("inspect", help="report parameter counts and FLOPs for a config")
    p.add_argument("--config", required=True, metavar="NAME_OR_PATH")
    p.add_argument("--input-dims", nargs=3, type=int, default=(128, 128, 128),
                   metavar=("D", "H", "W"))

    return parser


# -- subcommand bodies ---------------------------------------------------------


def _cmd_preprocess(args) -> int:
    vols = {}
    spacing = None
    for name in ("t1", "t1ce", "t2", "flair"):
        vol = read_volume(getattr(args, name))
        if vol.data.ndim != 3 or vol.data.dtype != np.float32:
            raise ValueError(f"--{name} must be a 3D image volume")
        if spacing is None:
            spacing = vol.spacing_mm
        elif vol.spacing_mm != spacing:
            raise ValueError(
                f"--{name} spacing {vol.spacing_mm} differs from t1 spacing {spacing}"
            )
        vols[name] = vol.data
    study = Study(**vols, spacing_mm=spacing)
    normalized = preprocess_study(study, clip_percentiles=tuple(args.clip))
    write_volume(args.out, normalized, spacing_mm=spacing)
    print(f"wrote {args.out} shape {tuple(normalized.shape)}")
    return 0


def _parse_weight_args(specs):
    tagged = []
    for item in specs:
        family, sep, path = item.partition(":")
        if not sep or family not in (FAMILY_SINGLE, FAMILY_CASCADE) or not path:
            raise ValueError(
                f"--weights entries look like single:PATH or cascade:PATH, got {item!r}"
            )
        tagged.append((family, path))
    return tagged


def _pipeline_config(base: PipelineConfig, args) -> PipelineConfig:
    fields = base.to_dict()
    if args.no_tta:
        fields["tta"] = False
    if args.et_threshold_single is not None:
        fields["et_min_voxels_single"] = args.et_threshold_single
    if args.et_threshold_cascade is not None:
        fields["et_min_voxels_cascade"] = args.et_threshold_cascade
    if args.crop is not None:
        fields["crop_dims"] = tuple(args.crop)
    if args.patch is not None:
        fields["patch_dims"] = tuple(args.patch)
    if args.strides is not None:
        fields["strides"] = tuple(args.strides)
    return PipelineConfig.from_dict(fields)


def _cmd_infer(args) -> int:
    family_cfg = load_family_config(args.config)
    pipe_cfg = _pipeline_config(family_cfg.pipeline, args)
    vol = read_volume(args.input)
    if vol.data.ndim != 4:
        raise ValueError("--input must be a preprocessed multi-channel volume (4 axes)")

    singles, cascades = [], []
    for family, path in _parse_weight_args(args.weights):
        store = read_weights(path)
        if family == FAMILY_SINGLE:
            if family_cfg.single is None:
                raise ValueError(f"config {args.config!r} defines no single-network structure")
            singles.append(make_single_model(store, family_cfg.single))
        else:
            if family_cfg.cascade is None:
                raise ValueError(f"config {args.config!r} defines no cascade structure")
            cascades.append(make_cascade_model(store, family_cfg.cascade))

    in_channels = vol.data.shape[0]
    for cfg, used in (
        (family_cfg.single, bool(singles)),
        (family_cfg.cascade[0] if family_cfg.cascade else None, bool(cascades)),
    ):
        if used and cfg.in_channels != in_channels:
            raise ValueError(
                f"input volume has {in_channels} channels but the network expects {cfg.in_channels}"
            )

    models = ModelEnsemble(single=tuple(singles), cascade=tuple(cascades))
    labels = run_volume(vol.data, models, pipe_cfg)
    write_volume(args.out, labels, spacing_mm=vol.spacing_mm)
    counts = {int(v): int(n) for v, n in zip(*np.unique(labels, return_counts=True))}
    print(f"wrote {args.out} labels {counts}")
    return 0


_REPORT_REGIONS = (("ET", 2), ("WT", 0), ("TC", 1))  # CSV row order -> region channel


def _cmd_evaluate(args) -> int:
    pred = read_volume(args.pred)
    gt = read_volume(args.gt)
    for name, vol in (("pred", pred), ("gt", gt)):
        if vol.data.dtype != np.uint8:
            raise ValueError(f"--{name} must be a u8 label volume")
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"label dims differ: pred {pred.data.shape} vs gt {gt.data.shape}")
    if pred.spacing_mm != gt.spacing_mm:
        raise ValueError(
            f"voxel spacing differs: pred {pred.spacing_mm} vs gt {gt.spacing_mm}"
        )
    pred_regions = labels_to_regions(pred.data)
    gt_regions = labels_to_regions(gt.data)

    rows = []
    for name, channel in _REPORT_REGIONS:
        p, g = pred_regions[channel], gt_regions[channel]
        d = dice_score(p, g)
        # surface distance is undefined when either mask is empty
        h = hd95(p, g, spacing_mm=gt.spacing_mm) if p.any() and g.any() else float("nan")
        rows.append((name, d, h))

    dice_mean = float(np.mean([d for _, d, _ in rows]))
    finite_h = [h for _, _, h in rows if np.isfinite(h)]
    h_mean = float(np.mean(finite_h)) if finite_h else float("nan")
    rows.append(("mean", dice_mean, h_mean))

    lines = ["region,dice,hd95_mm"]
    for name, d, h in rows:
        h_text = f"{h:.6f}" if np.isfinite(h) else "nan"
        lines.append(f"{name},{d:.6f},{h_text}")
        print(f"{name}: dice {d:.4f}  hd95 {h_text} mm")
    _atomic_write(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    return 0


def _cmd_init_weights(args) -> int:
    family_cfg = load_family_config(args.config)
    if family_cfg.family == FAMILY_SINGLE:
        store = init_single_store(family_cfg.single, args.seed)
    elif family_cfg.family == FAMILY_CASCADE:
        store = init_cascade_store(family_cfg.cascade, args.seed)
    else:
        raise ValueError(
            "init-weights needs a single- or cascade-family config; "
            "initialize the hybrid's families one at a time"
        )
    write_weights(args.out, store)
    print(f"wrote {args.out}: {len(store)} parameters, {store.nbytes():,} bytes, seed {args.seed}")
    return 0


def build_inspect_report(family_cfg: FamilyConfig, input_dims) -> str:
    """Cost table plus target comparison, flags, and the accounting formula."""
    dims = tuple(int(d) for d in input_dims)
    rows = []
    if family_cfg.single is not None:
        p = param_count(family_cfg.single)
        f = flops_estimate(family_cfg.single, dims)
        m = macs_breakdown(family_cfg.single, dims)
        rows.append(("single", p, f, m))
    if family_cfg.cascade is not None:
        p = sum(param_count(c) for c in family_cfg.cascade)
        parts = [macs_breakdown(c, dims) for c in family_cfg.cascade]
        m = {k: sum(pt[k] for pt in parts) for k in ("conv", "attention", "total")}
        rows.append(("cascaded", p, 2 * m["total"], m))

    name_w = max(len("Method"), max(len(r[0]) for r in rows))
    out = [f"Input dims: {dims[0]} x {dims[1]} x {dims[2]}", ""]
    out.append(f"{'Method':<{name_w}}  {'Params (M)':>10}  {'FLOPs (G)':>10}")
    for name, p, f, _ in rows:
        out.append(f"{name:<{name_w}}  {p / 1e6:>10.2f}  {f / 1e9:>10.2f}")
    out.append("")
    for name, p, f, m in rows:
        ref = REFERENCE_COSTS.get(name)
        if ref is None:
            continue
        lo, hi = ref["params_band_m"]
        pm, fg = p / 1e6, f / 1e9
        p_delta = 100.0 * (pm - ref["params_m"]) / ref["params_m"]
        f_delta = 100.0 * (fg - ref["flops_g"]) / ref["flops_g"]
        p_flag = "" if lo <= pm <= hi else "  [FLAG: outside band]"
        f_flag = "" if abs(f_delta) <= 10.0 else "  [FLAG: differs from target]"
        out.append(
            f"{name}: params {pm:.2f} M vs target {ref['params_m']:.2f} M "
            f"({p_delta:+.1f}%, band [{lo:.0f}, {hi:.0f}] M){p_flag}"
        )
        out.append(
            f"{name}: FLOPs {fg:.2f} G vs target {ref['flops_g']:.2f} G ({f_delta:+.1f}%){f_flag}"
        )
        out.append(
            f"{name}: exact params {p:,}; conv MACs {m['conv'] / 1e9:.2f} G; "
            f"attention MACs {m['attention'] / 1e9:.2f} G"
        )
    out.append("")
    out.append(
        "FLOPs formula: 2 x multiply-accumulates, summed over all convolutions "
        "plus the attention matrix products ((2T+1) * voxels * width * bases); "
        "resampling and elementwise nonlinearities are excluded."
    )
    out.append(
        "Note: the FLOPs targets track convolution MACs only (not doubled, attention "
        "products excluded); the conv MACs line is the comparable quantity."
    )
    return "\n".join(out)


def _cmd_inspect(args) -> int:
    family_cfg = load_family_config(args.config)
    print(build_inspect_report(family_cfg, args.input_dims))
    return 0


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "infer": _cmd_infer,
    "evaluate": _cmd_evaluate,
    "init-weights": _cmd_init_weights,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"tumorseg: validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"tumorseg: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
