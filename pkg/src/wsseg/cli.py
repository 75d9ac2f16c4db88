"""Command-line interface.

Every pipeline and analysis is a subcommand; flags mirror config keys
one-to-one and an optional --config JSON file supplies defaults that
explicit flags override. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .core import UNLABELED, LabelMask, normalize_stack
from .crf import PRESETS, CrfMode, CrfParams, argmax_labels, build_unary, mean_field
from .errors import WssegError
from .formats import png_to_mask, read_manifest, read_stack, read_taxonomy
from .metrics import Connectivity, EvalAccumulator, confusion_to_csv, format_report
from .pipeline import (
    PipelineName,
    PipelineSpec,
    assemble_full_stack,
    _load_aux,
    make_synthetic_fixture,
    run_pipeline,
)
from .propagate import FeatureSource, GrowPolicy, WalkPolicy, build_transition, random_walk, region_grow
from .seeds import (
    BackgroundSource,
    OverlapRule,
    SeedPolicy,
    ThresholdMode,
    adp_policy,
    coverage_target_search,
    dsrg_policy,
    irn_policy,
    sec_policy,
)


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default of 2 is reserved for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


_STRATEGIES = {"sec": sec_policy, "dsrg": dsrg_policy, "irn": irn_policy, "adp": adp_policy}


def _add_seed_flags(p):
    g = p.add_argument_group("seed policy")
    g.add_argument("--strategy", choices=sorted(_STRATEGIES), help="named seeding recipe to start from")
    g.add_argument("--threshold-mode", choices=[m.value for m in ThresholdMode])
    g.add_argument("--threshold-rel", type=float, help="relative-to-max threshold (sets mode rel_max)")
    g.add_argument("--threshold-abs", type=float, help="absolute threshold (sets mode absolute)")
    g.add_argument("--bg-source", choices=[s.value for s in BackgroundSource])
    g.add_argument("--bg-percentile", type=float)
    g.add_argument("--median-kernel", type=int)
    g.add_argument("--overlap-rule", choices=[r.value for r in OverlapRule])
    g.add_argument("--sigmoid-scale", type=float)
    g.add_argument("--sigmoid-shift", type=float)
    g.add_argument("--blur-sigma", type=float)
    g.add_argument("--low-activation-cutoff", type=float)


def _seed_policy(args) -> SeedPolicy:
    policy = _STRATEGIES[args.strategy]() if args.strategy else SeedPolicy()
    updates = {}
    if args.threshold_mode:
        updates["fg_threshold_mode"] = ThresholdMode(args.threshold_mode)
    if args.threshold_rel is not None:
        updates["fg_threshold_mode"] = ThresholdMode.REL_MAX
        updates["fg_threshold"] = args.threshold_rel
    if args.threshold_abs is not None:
        updates["fg_threshold_mode"] = ThresholdMode.ABSOLUTE
        updates["fg_threshold"] = args.threshold_abs
    if args.bg_source:
        updates["bg_source"] = BackgroundSource(args.bg_source)
    for name in ("bg_percentile", "median_kernel", "sigmoid_scale", "sigmoid_shift",
                 "blur_sigma", "low_activation_cutoff"):
        val = getattr(args, name)
        if val is not None:
            updates[name] = val
    if args.overlap_rule:
        updates["overlap_rule"] = OverlapRule(args.overlap_rule)
    from dataclasses import replace

    return replace(policy, **updates) if updates else policy


def _add_crf_flags(p):
    g = p.add_argument_group("crf parameters")
    g.add_argument("--crf-preset", choices=sorted(PRESETS))
    g.add_argument("--crf-iterations", type=int)
    g.add_argument("--crf-mode", choices=[m.value for m in CrfMode])
    g.add_argument("--appearance-weight", type=float)
    g.add_argument("--appearance-spatial-sigma", type=float)
    g.add_argument("--appearance-color-sigma", type=float)
    g.add_argument("--smoothness-weight", type=float)
    g.add_argument("--smoothness-sigma", type=float)


def _crf_params(args) -> CrfParams:
    base = PRESETS[args.crf_preset] if args.crf_preset else CrfParams()
    from dataclasses import replace

    updates = {}
    if args.crf_iterations is not None:
        updates["iterations"] = args.crf_iterations
    if args.crf_mode:
        updates["mode"] = CrfMode(args.crf_mode)
    for flag, field_name in (
        ("appearance_weight", "appearance_weight"),
        ("appearance_spatial_sigma", "appearance_spatial_sigma"),
        ("appearance_color_sigma", "appearance_color_sigma"),
        ("smoothness_weight", "smoothness_weight"),
        ("smoothness_sigma", "smoothness_sigma"),
    ):
        val = getattr(args, flag)
        if val is not None:
            updates[field_name] = val
    return replace(base, **updates) if updates else base


def _add_grow_flags(p):
    g = p.add_argument_group("region growing")
    g.add_argument("--grow-threshold", type=float)
    g.add_argument("--grow-connectivity", type=int, choices=[4, 8])
    g.add_argument("--grow-max-iter", type=int)
    g.add_argument("--grow-features", choices=[f.value for f in FeatureSource])


def _grow_policy(args) -> GrowPolicy:
    kw = {}
    if args.grow_threshold is not None:
        kw["similarity_threshold"] = args.grow_threshold
    if args.grow_connectivity is not None:
        kw["connectivity"] = Connectivity(args.grow_connectivity)
    if args.grow_max_iter is not None:
        kw["max_iterations"] = args.grow_max_iter
    if args.grow_features:
        kw["feature_source"] = FeatureSource(args.grow_features)
    return GrowPolicy(**kw)


def _add_walk_flags(p):
    g = p.add_argument_group("random walk")
    g.add_argument("--walk-beta", type=float)
    g.add_argument("--walk-steps", type=int)
    g.add_argument("--walk-radius", type=int)
    g.add_argument("--walk-connectivity", type=int, choices=[4, 8])
    g.add_argument("--walk-renormalize", action="store_true", default=None)


def _walk_policy(args) -> WalkPolicy:
    kw = {}
    if args.walk_beta is not None:
        kw["beta"] = args.walk_beta
    if args.walk_steps is not None:
        kw["steps"] = args.walk_steps
    if args.walk_radius is not None:
        kw["radius"] = args.walk_radius
    if args.walk_connectivity is not None:
        kw["connectivity"] = Connectivity(args.walk_connectivity)
    if args.walk_renormalize:
        kw["renormalize"] = True
    return WalkPolicy(**kw)


def _build_parser():
    parser = _Parser(prog="wsseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text, fn):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; explicit flags override its keys")
        p.set_defaults(fn=fn)
        return p

    p = add("seed", "generate seed masks from activation stacks", cmd_seed)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_seed_flags(p)

    p = add("grow", "region-grow existing seed masks", cmd_grow)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", required=True, help="directory of seed mask PNGs")
    p.add_argument("--out", required=True)
    _add_grow_flags(p)

    p = add("walk", "random-walk stacks under manifest boundary maps", cmd_walk)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_walk_flags(p)

    p = add("crf", "dense-CRF refine stacks and write argmax masks", cmd_crf)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_seed_flags(p)
    _add_crf_flags(p)

    p = add("run", "run a named pipeline over a manifest", cmd_run)
    p.add_argument("--pipeline", choices=["baseline"] + [n.value for n in PipelineName], default="baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--composites", action="store_true")
    p.add_argument("--no-subtract", action="store_true")
    p.add_argument("--no-other", action="store_true", help="skip other-map synthesis")
    p.add_argument("--other-scale", type=float, default=None)
    p.add_argument("--transparent-classes", nargs="*", default=None)
    p.add_argument("--upsample-to-gt", action="store_true")
    _add_seed_flags(p)
    _add_crf_flags(p)
    _add_grow_flags(p)
    _add_walk_flags(p)

    p = add("eval", "score prediction masks against ground truth", cmd_eval)
    p.add_argument("--pred", required=True, help="directory of prediction PNGs")
    p.add_argument("--gt", required=True, help="directory of ground-truth PNGs")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", default="eval_report.json", help="JSON report path")
    p.add_argument("--confusion-csv", help="also write the confusion matrix as CSV")

    p = add("sweep", "seed coverage/recall/precision across a threshold grid", cmd_sweep)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="comma-separated thresholds, default 0.90..0.20 step 0.05")
    p.add_argument("--target", type=float, default=0.5, help="coverage target for the search")
    _add_seed_flags(p)

    p = add("advise", "recommend a method family for a dataset", cmd_advise)
    p.add_argument("--mode", choices=["method", "sparseness"], default="method")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", help="seed mask directory (method mode)")
    p.add_argument("--recall-cutoff", type=float, default=0.40)
    p.add_argument("--low-cutoff", type=float, default=1.65)
    p.add_argument("--high-cutoff", type=float, default=1.68)
    p.add_argument("--instances-statistic", choices=["per_class", "total"], default="per_class")
    p.add_argument("--out")

    p = add("balance", "drop the most label-heavy half of the training images", cmd_balance)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = add("fixture", "generate a synthetic blob dataset", cmd_fixture)
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--blur", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _apply_config(parser, argv):
    """Two-phase parse: config values become defaults, explicit flags override."""
    pre, _ = parser.parse_known_args(argv)
    config_path = getattr(pre, "config", None)
    if not config_path:
        return parser.parse_args(argv)
    try:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise WssegError(f"cannot load config {config_path}: {e}") from e
    if not isinstance(doc, dict):
        raise WssegError(f"config {config_path} must hold a JSON object")
    defaults = {k.replace("-", "_"): v for k, v in doc.items()}
    # route defaults to the active subparser
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction) and pre.command in action.choices:
            subparser = action.choices[pre.command]
            known = {a.dest for a in subparser._actions}
            unknown = set(defaults) - known
            if unknown:
                raise WssegError(f"config keys not recognized by '{pre.command}': {sorted(unknown)}")
            subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _iter_seed_entries(manifest, taxonomy):
    for entry in manifest.images:
        stack = normalize_stack(read_stack(manifest.resolve(entry.stack), entry.id))
        aux = _load_aux(manifest, entry)
        yield entry, stack, aux


def cmd_seed(args):
    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    policy = _seed_policy(args)
    spec = PipelineSpec(PipelineName.SEC_SEEDS, seed_policy=policy)
    run_pipeline(spec, manifest, args.out)
    print(f"seed masks written to {Path(args.out) / 'seeds'}")
    return 0


def cmd_grow(args):
    from .pipeline import _grow_features

    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    policy = _grow_policy(args)
    out = Path(args.out)
    grown_dir = out / "seeds"
    grown_dir.mkdir(parents=True, exist_ok=True)
    covs = []
    for entry, stack, aux in _iter_seed_entries(manifest, taxonomy):
        seeds = png_to_mask(Path(args.seeds) / f"{entry.id}.png", taxonomy)
        feats = _grow_features(stack, aux, policy, entry.id)
        grown = region_grow(seeds, feats, policy)
        from .formats import mask_to_png

        mask_to_png(grown, taxonomy, grown_dir / f"{entry.id}.png")
        covs.append(float((grown.labels != UNLABELED).mean()))
    print(f"grown {len(covs)} masks, mean coverage {np.mean(covs):.4f}")
    return 0


def cmd_walk(args):
    from .formats import mask_to_png, read_boundary

    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    policy = _walk_policy(args)
    out = Path(args.out)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.images:
        if not entry.boundary:
            raise WssegError(f"image {entry.id!r} has no boundary map in the manifest")
        stack = normalize_stack(read_stack(manifest.resolve(entry.stack), entry.id))
        boundary = read_boundary(manifest.resolve(entry.boundary))
        transition = build_transition(boundary, policy)
        walked = random_walk(stack, transition, policy)
        pred = LabelMask(np.argmax(walked.maps, axis=0).astype(np.uint8))
        mask_to_png(pred, taxonomy, masks_dir / f"{entry.id}.png")
    print(f"walked masks written to {masks_dir}")
    return 0


def cmd_crf(args):
    from .formats import mask_to_png

    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    params = _crf_params(args)
    spec = PipelineSpec(seed_policy=_seed_policy(args))
    out = Path(args.out)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.images:
        stack = normalize_stack(read_stack(manifest.resolve(entry.stack), entry.id))
        aux = _load_aux(manifest, entry)
        full = assemble_full_stack(stack, taxonomy, spec, aux)
        if aux.rgb is None:
            raise WssegError(f"image {entry.id!r} has no rgb image in the manifest")
        field = mean_field(build_unary(full), aux.rgb, params)
        mask_to_png(argmax_labels(field), taxonomy, masks_dir / f"{entry.id}.png")
    print(f"refined masks written to {masks_dir}")
    return 0


def cmd_run(args):
    manifest = read_manifest(args.manifest)
    name = None if args.pipeline == "baseline" else PipelineName(args.pipeline)
    kw = {}
    if args.no_subtract:
        kw["subtract"] = False
    if args.no_other:
        kw["synthesize_other_map"] = False
    if args.other_scale is not None:
        kw["other_scale"] = args.other_scale
    if args.transparent_classes is not None:
        kw["transparent_classes"] = tuple(args.transparent_classes)
    if args.upsample_to_gt:
        kw["upsample_to_gt"] = True
    spec = PipelineSpec(
        name,
        seed_policy=_seed_policy(args),
        grow_policy=_grow_policy(args),
        walk_policy=_walk_policy(args),
        crf_params=_crf_params(args),
        **kw,
    )
    result = run_pipeline(spec, manifest, args.out, jobs=args.jobs, composites=args.composites)
    taxonomy = manifest.load_taxonomy()
    if result.aggregate is not None:
        print(format_report(result.aggregate, taxonomy))
    covs = [d["seed_coverage"] for d in result.per_image if "seed_coverage" in d]
    if covs:
        print(f"mean seed coverage: {float(np.mean(covs)):.4f}")
    print(f"outputs in {result.out_dir}")
    return 0


def cmd_eval(args):
    taxonomy = read_taxonomy(args.taxonomy)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    stems = sorted(p.stem for p in pred_dir.glob("*.png"))
    if not stems:
        raise WssegError(f"no PNG masks in {pred_dir}")
    acc = EvalAccumulator(taxonomy)
    matched = 0
    for stem in stems:
        gt_path = gt_dir / f"{stem}.png"
        if not gt_path.exists():
            gt_path = gt_dir / f"{stem}_gt.png"
            if not gt_path.exists():
                continue
        acc.add(png_to_mask(pred_dir / f"{stem}.png", taxonomy), png_to_mask(gt_path, taxonomy))
        matched += 1
    if matched == 0:
        raise WssegError("no prediction/ground-truth pairs matched by filename")
    report = acc.report()
    print(format_report(report, taxonomy))
    Path(args.out).write_text(json.dumps(report.to_dict(taxonomy), indent=2), encoding="utf-8")
    if args.confusion_csv:
        confusion_to_csv(report, taxonomy, args.confusion_csv)
    return 0


def _collection_from_manifest(manifest, taxonomy, with_gt=True):
    collection = []
    for entry in manifest.images:
        stack = normalize_stack(read_stack(manifest.resolve(entry.stack), entry.id))
        aux = _load_aux(manifest, entry)
        policy_inputs = {
            "bg_stack": aux.bg_stack,
            "mean_rgb": aux.rgb.mean(axis=2) if aux.rgb is not None else None,
            "transparent_stack": aux.transparent_stack,
        }
        policy_inputs = {k: v for k, v in policy_inputs.items() if v is not None}
        gt = None
        if with_gt and entry.gt_mask:
            gt = png_to_mask(manifest.resolve(entry.gt_mask), taxonomy)
        collection.append((stack, entry.labels, policy_inputs, gt))
    return collection


def cmd_sweep(args):
    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    policy = _seed_policy(args)
    if args.grid:
        grid = [float(x) for x in args.grid.split(",")]
    else:
        from .seeds import DEFAULT_GRID

        grid = list(DEFAULT_GRID)
    collection = _collection_from_manifest(manifest, taxonomy)
    rows = analysis.sweep_thresholds(collection, policy, taxonomy, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_sweep_table(rows, out / "sweep.json", out / "sweep.csv")
    analysis.render_sweep_curve(rows, out / "sweep.png")
    search = coverage_target_search(
        [(s, l, e) for s, l, e, _ in collection], policy, taxonomy, target=args.target, grid=grid
    )
    summary = {
        "selected_threshold": search.threshold,
        "mean_coverage": search.mean_coverage,
        "target": args.target,
        "target_met": search.target_met,
    }
    (out / "selected.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    for row in rows:
        extra = ""
        if row.mean_recall is not None:
            extra = f"  recall {row.mean_recall:.4f}  precision {row.mean_precision:.4f}"
        print(f"threshold {row.threshold:.2f}  coverage {row.mean_coverage:.4f}{extra}")
    flag = "" if search.target_met else "  (no grid threshold stayed below target)"
    print(f"selected threshold {search.threshold:.2f} with coverage {search.mean_coverage:.4f}{flag}")
    return 0


def cmd_advise(args):
    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    if args.mode == "method":
        if not args.seeds:
            raise WssegError("method mode needs --seeds (directory of seed masks)")
        pairs = []
        for entry in manifest.images:
            seed_path = Path(args.seeds) / f"{entry.id}.png"
            if not seed_path.exists():
                raise WssegError(f"no seed mask for image {entry.id!r} in {args.seeds}")
            gt = png_to_mask(manifest.resolve(entry.gt_mask), taxonomy) if entry.gt_mask else None
            pairs.append((png_to_mask(seed_path, taxonomy), gt))
        verdict = analysis.advise_method(pairs, taxonomy, args.recall_cutoff)
        doc = {
            "recommendation": verdict.recommendation,
            "mean_seed_recall": verdict.mean_seed_recall,
            "mean_seed_coverage": verdict.mean_seed_coverage,
            "rationale": verdict.rationale,
        }
    else:
        gts = [
            png_to_mask(manifest.resolve(e.gt_mask), taxonomy)
            for e in manifest.images
            if e.gt_mask
        ]
        verdict = analysis.advise_sparseness(
            gts,
            args.low_cutoff,
            args.high_cutoff,
            per_present_class=args.instances_statistic == "per_class",
        )
        doc = {
            "recommendation": verdict.recommendation,
            "mean_gt_instances": verdict.mean_gt_instances,
        }
    print(json.dumps(doc, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return 0


def cmd_balance(args):
    from .formats import Manifest, write_manifest

    manifest = read_manifest(args.manifest)
    taxonomy = manifest.load_taxonomy()
    result = analysis.balance_dataset(
        [(e.id, e.labels) for e in manifest.images], taxonomy, args.fraction
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kept_ids = set(result.kept_ids)
    kept = Manifest(
        tuple(e for e in manifest.images if e.id in kept_ids), manifest.taxonomy, manifest.root
    )
    removed = Manifest(
        tuple(e for e in manifest.images if e.id not in kept_ids), manifest.taxonomy, manifest.root
    )
    write_manifest(kept, out / "kept.json")
    write_manifest(removed, out / "removed.json")
    doc = {
        "kept": list(result.kept_ids),
        "removed": list(result.removed_ids),
        "before": result.before.to_dict(taxonomy),
        "after": result.after.to_dict(taxonomy),
    }
    (out / "cooccurrence.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(f"removed {len(result.removed_ids)} of {len(manifest.images)} images; outputs in {out}")
    return 0


def cmd_fixture(args):
    manifest = make_synthetic_fixture(
        args.out,
        n_images=args.images,
        n_classes=args.classes,
        size=args.size,
        blobs_per_class=args.blobs,
        activation_blur=args.blur,
        noise=args.noise,
        seed=args.seed,
    )
    print(f"fixture with {len(manifest.images)} images written to {args.out}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
    except WssegError as e:
        print(f"wsseg: {e}", file=sys.stderr)
        return 2
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except WssegError as e:
        print(f"wsseg: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"wsseg: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
