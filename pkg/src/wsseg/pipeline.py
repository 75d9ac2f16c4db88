"""Named method pipelines over exported activation stacks.

Four recipes plus a baseline:
  * baseline      - argmax of the normalized (and background/other augmented) stack
  * sec           - threshold seeds + background cue -> seed masks
  * dsrg          - sec-style seeds -> seeded region growing -> seed masks
  * irn           - absolute-threshold seeds -> CRF refinement -> boundary-gated
                    random walk -> masks
  * histosegnet   - background/other synthesis -> class subtraction -> dense CRF -> masks

Seed masks are first-class outputs: an external trainer can consume them as
pseudo ground truth.
"""

from __future__ import annotations

import colorsys
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .adjust import subtract_classes, synthesize_other
from .core import (
    UNLABELED,
    ActivationStack,
    BackgroundMode,
    ClassTaxonomy,
    LabelMask,
    ProbabilityField,
    normalize_stack,
)
from .crf import CrfParams, argmax_labels, build_unary, mean_field
from .errors import DimensionMismatchError, MissingAuxiliaryInputError, WssegError
from .formats import (
    Manifest,
    ManifestImage,
    mask_to_png,
    png_to_mask,
    read_boundary,
    read_stack,
    write_manifest,
    write_stack,
    write_taxonomy,
)
from .metrics import EvalAccumulator, EvalReport, coverage, format_report, miou, report_to_csv
from .propagate import FeatureSource, GrowPolicy, WalkPolicy, build_transition, random_walk, region_grow
from .seeds import (
    BackgroundSource,
    SeedPolicy,
    adp_policy,
    dsrg_policy,
    external_background_map,
    generate_seeds,
    irn_policy,
    sec_policy,
    synthesize_background_white,
)


class PipelineName(Enum):
    SEC_SEEDS = "sec"
    DSRG_SEEDS = "dsrg"
    IRN_SEEDS_AND_WALK = "irn"
    HISTOSEGNET = "histosegnet"


_DEFAULT_POLICIES = {
    PipelineName.SEC_SEEDS: sec_policy,
    PipelineName.DSRG_SEEDS: dsrg_policy,
    PipelineName.IRN_SEEDS_AND_WALK: irn_policy,
    PipelineName.HISTOSEGNET: adp_policy,
}


@dataclass(frozen=True)
class PipelineSpec:
    name: PipelineName = None
    seed_policy: SeedPolicy = None
    grow_policy: GrowPolicy = None
    walk_policy: WalkPolicy = None
    crf_params: CrfParams = None
    subtract: bool = True
    synthesize_other_map: bool = True  # applies only when the taxonomy has an "other" class
    other_scale: float = 0.05
    transparent_classes: tuple = ()
    unary_epsilon: float = 1e-3
    seed_field_strength: float = 0.9
    upsample_to_gt: bool = False

    def __post_init__(self):
        if self.name is PipelineName.HISTOSEGNET and self.crf_params is None:
            raise WssegError("histosegnet pipeline requires crf_params")
        if self.name is PipelineName.IRN_SEEDS_AND_WALK and self.walk_policy is None:
            raise WssegError("irn pipeline requires a walk_policy")
        if self.name is PipelineName.DSRG_SEEDS and self.grow_policy is None:
            raise WssegError("dsrg pipeline requires a grow_policy")
        object.__setattr__(self, "transparent_classes", tuple(self.transparent_classes))

    def effective_seed_policy(self):
        if self.seed_policy is not None:
            return self.seed_policy
        if self.name in _DEFAULT_POLICIES:
            return _DEFAULT_POLICIES[self.name]()
        return SeedPolicy()


def read_rgb(path):
    try:
        img = Image.open(path).convert("RGB")
    except OSError as e:
        raise MissingAuxiliaryInputError(f"cannot read rgb image {path}: {e}") from e
    return np.asarray(img, dtype=np.float64)


@dataclass
class _Aux:
    rgb: np.ndarray = None
    boundary: object = None
    bg_stack: ActivationStack = None
    transparent_stack: ActivationStack = None


def _load_aux(manifest: Manifest, entry: ManifestImage) -> _Aux:
    aux = _Aux()
    if entry.rgb:
        aux.rgb = read_rgb(manifest.resolve(entry.rgb))
    if entry.boundary:
        aux.boundary = read_boundary(manifest.resolve(entry.boundary))
    if entry.bg_stack:
        aux.bg_stack = read_stack(manifest.resolve(entry.bg_stack))
    if entry.transparent_stack:
        aux.transparent_stack = read_stack(manifest.resolve(entry.transparent_stack))
    return aux


def _require(value, what, image_id):
    if value is None:
        raise MissingAuxiliaryInputError(f"image {image_id!r} needs {what} for this pipeline")
    return value


def _background_activation(policy: SeedPolicy, spec: PipelineSpec, norm: ActivationStack, aux: _Aux, image_id):
    """Continuous background activation map for stack assembly."""
    if policy.bg_source is BackgroundSource.WHITE_LEVEL:
        rgb = _require(aux.rgb, "an rgb image (white-level background)", image_id)
        mean_rgb = rgb.mean(axis=2)
        transparent = aux.transparent_stack
        return synthesize_background_white(
            mean_rgb, transparent, policy.sigmoid_scale, policy.sigmoid_shift, policy.blur_sigma
        )
    if policy.bg_source in (BackgroundSource.EXTERNAL_MAP, BackgroundSource.LOWEST_PERCENTILE):
        bg = _require(aux.bg_stack, "a background activation stack", image_id)
        return external_background_map(bg)
    return np.zeros((norm.height, norm.width))


def assemble_full_stack(norm: ActivationStack, taxonomy: ClassTaxonomy, spec: PipelineSpec, aux: _Aux):
    """Stack with one map per taxonomy class: foreground channels in place,
    background/other synthesized per the taxonomy's mode and never overwriting."""
    fg = taxonomy.foreground_indices
    if norm.num_classes != len(fg):
        raise DimensionMismatchError(
            f"stack holds {norm.num_classes} maps, taxonomy has {len(fg)} foreground classes"
        )
    c = len(taxonomy)
    maps = np.zeros((c, norm.height, norm.width))
    conf = np.ones(c)
    for channel, cls in enumerate(fg):
        maps[cls] = norm.maps[channel]
        conf[cls] = norm.confidences[channel]
    policy = spec.effective_seed_policy()
    bg_map = None
    if taxonomy.background_index is not None:
        bg_map = _background_activation(policy, spec, norm, aux, norm.image_id)
        maps[taxonomy.background_index] = bg_map
    if taxonomy.other_index is not None and spec.synthesize_other_map:
        adipose = []
        if aux.transparent_stack is not None:
            adipose = [aux.transparent_stack.maps[i] for i in range(aux.transparent_stack.num_classes)]
        for name in spec.transparent_classes:
            try:
                cls = taxonomy.index_of(name)
            except WssegError:
                continue
            adipose.append(maps[cls])
        functional = [maps[i] for i in fg]
        maps[taxonomy.other_index] = synthesize_other(
            functional, adipose, bg_map, scale=spec.other_scale
        )
    return ActivationStack(maps, conf, norm.image_id)


def _seed_inputs(policy: SeedPolicy, taxonomy: ClassTaxonomy, aux: _Aux, image_id):
    kw = {}
    if taxonomy.background_index is None:
        return kw  # no background class: generate_seeds skips synthesis
    if policy.bg_source is BackgroundSource.LOWEST_PERCENTILE:
        kw["bg_stack"] = _require(aux.bg_stack, "a background activation stack", image_id)
    elif policy.bg_source is BackgroundSource.WHITE_LEVEL:
        rgb = _require(aux.rgb, "an rgb image (white-level background)", image_id)
        kw["mean_rgb"] = rgb.mean(axis=2)
        kw["transparent_stack"] = aux.transparent_stack
    elif policy.bg_source is BackgroundSource.EXTERNAL_MAP:
        bg = _require(aux.bg_stack, "a background activation stack", image_id)
        kw["bg_map"] = external_background_map(bg)
    return kw


def seed_probability_field(seeds: LabelMask, n_classes: int, strength: float = 0.9) -> ProbabilityField:
    """Lift a seed mask to per-pixel class probabilities: seeded pixels put
    `strength` on their label, the rest spread evenly; unseeded pixels are uniform."""
    labels = seeds.labels
    h, w = labels.shape
    probs = np.full((n_classes, h, w), 1.0 / n_classes)
    seeded = labels != UNLABELED
    if n_classes > 1:
        rest = (1.0 - strength) / (n_classes - 1)
        probs[:, seeded] = rest
        ys, xs = np.nonzero(seeded)
        probs[labels[seeded].astype(np.int64), ys, xs] = strength
    return ProbabilityField(probs)


def _grow_features(norm: ActivationStack, aux: _Aux, policy: GrowPolicy, image_id):
    if policy.feature_source is FeatureSource.RGB:
        rgb = _require(aux.rgb, "an rgb image (growing features)", image_id)
        return np.moveaxis(rgb, 2, 0) / 255.0
    # unit-normalized per-pixel activation vectors
    feats = norm.maps
    norms = np.sqrt((feats * feats).sum(axis=0, keepdims=True))
    return np.where(norms > 0, feats / np.maximum(norms, 1e-300), 0.0)


@dataclass
class ImageResult:
    image_id: str
    prediction: LabelMask = None
    seeds: LabelMask = None
    report: EvalReport = None


def process_image(spec: PipelineSpec, taxonomy: ClassTaxonomy, manifest: Manifest, entry: ManifestImage) -> ImageResult:
    stack = read_stack(manifest.resolve(entry.stack), entry.id)
    norm = normalize_stack(stack)
    aux = _load_aux(manifest, entry)
    policy = spec.effective_seed_policy()
    result = ImageResult(entry.id)

    if spec.name is None:
        full = assemble_full_stack(norm, taxonomy, spec, aux)
        result.prediction = LabelMask(np.argmax(full.maps, axis=0).astype(np.uint8))

    elif spec.name in (PipelineName.SEC_SEEDS, PipelineName.DSRG_SEEDS):
        seeds = generate_seeds(
            norm, entry.labels, policy, taxonomy, **_seed_inputs(policy, taxonomy, aux, entry.id)
        )
        if spec.name is PipelineName.DSRG_SEEDS:
            feats = _grow_features(norm, aux, spec.grow_policy, entry.id)
            seeds = region_grow(seeds, feats, spec.grow_policy)
        result.seeds = seeds

    elif spec.name is PipelineName.IRN_SEEDS_AND_WALK:
        seeds = generate_seeds(
            norm, entry.labels, policy, taxonomy, **_seed_inputs(policy, taxonomy, aux, entry.id)
        )
        result.seeds = seeds
        rgb = _require(aux.rgb, "an rgb image (CRF refinement)", entry.id)
        boundary = _require(aux.boundary, "a boundary map", entry.id)
        crf = spec.crf_params if spec.crf_params is not None else CrfParams()
        refined = mean_field(
            seed_probability_field(seeds, len(taxonomy), spec.seed_field_strength), rgb, crf
        )
        transition = build_transition(boundary, spec.walk_policy)
        walked = random_walk(
            ActivationStack(refined.probs, np.ones(len(taxonomy)), entry.id),
            transition,
            spec.walk_policy,
        )
        result.prediction = LabelMask(np.argmax(walked.maps, axis=0).astype(np.uint8))

    elif spec.name is PipelineName.HISTOSEGNET:
        full = assemble_full_stack(norm, taxonomy, spec, aux)
        if spec.subtract:
            full = subtract_classes(full)
        unary = build_unary(full, spec.unary_epsilon)
        rgb = _require(aux.rgb, "an rgb image (dense CRF)", entry.id)
        field = mean_field(unary, rgb, spec.crf_params)
        result.prediction = argmax_labels(field)

    else:
        raise WssegError(f"unknown pipeline {spec.name!r}")
    return result


def _nearest_resize(labels, h, w):
    src_h, src_w = labels.shape
    rows = np.floor(np.arange(h) * src_h / h).astype(np.int64)
    cols = np.floor(np.arange(w) * src_w / w).astype(np.int64)
    return labels[rows[:, None], cols[None, :]]


@dataclass
class RunResult:
    out_dir: Path
    per_image: list
    aggregate: EvalReport = None


def _render_panel(mask: LabelMask, taxonomy: ClassTaxonomy):
    palette = np.zeros((256, 3), dtype=np.uint8)
    for i, c in enumerate(taxonomy.colors):
        palette[i] = c
    return palette[mask.labels]


def run_pipeline(
    spec: PipelineSpec,
    manifest: Manifest,
    out_dir,
    jobs: int = 1,
    composites: bool = False,
) -> RunResult:
    """Run a pipeline over every manifest image; write masks/seeds/reports.

    Deterministic: identical spec and inputs produce byte-identical outputs,
    regardless of the worker count.
    """
    out_dir = Path(out_dir)
    taxonomy = manifest.load_taxonomy()
    masks_dir = out_dir / "masks"
    seeds_dir = out_dir / "seeds"
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry):
        return process_image(spec, taxonomy, manifest, entry)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, manifest.images))
    else:
        results = [work(e) for e in manifest.images]

    acc = EvalAccumulator(taxonomy)
    have_gt = False
    per_image = []
    for entry, res in zip(manifest.images, results):
        doc = {"id": entry.id}
        if res.seeds is not None:
            seeds_dir.mkdir(parents=True, exist_ok=True)
            mask_to_png(res.seeds, taxonomy, seeds_dir / f"{entry.id}.png")
            doc["seed_coverage"] = coverage(res.seeds)
        if res.prediction is not None:
            masks_dir.mkdir(parents=True, exist_ok=True)
            mask_to_png(res.prediction, taxonomy, masks_dir / f"{entry.id}.png")
        evaluated = res.prediction if res.prediction is not None else res.seeds
        if entry.gt_mask is not None and evaluated is not None:
            gt = png_to_mask(manifest.resolve(entry.gt_mask), taxonomy)
            if gt.labels.shape != evaluated.labels.shape:
                if spec.upsample_to_gt:
                    evaluated = LabelMask(_nearest_resize(evaluated.labels, gt.height, gt.width))
                else:
                    raise DimensionMismatchError(
                        f"image {entry.id!r}: prediction {evaluated.labels.shape} vs gt {gt.labels.shape}"
                        " (pass upsample_to_gt to resize)"
                    )
            res.report = miou(evaluated, gt, taxonomy)
            acc.add(evaluated, gt)
            have_gt = True
            doc["miou"] = res.report.miou
            doc["mean_recall"] = res.report.mean_recall
        if composites and (res.prediction is not None or res.seeds is not None):
            comp_dir = out_dir / "composites"
            comp_dir.mkdir(parents=True, exist_ok=True)
            panels = []
            aux = _load_aux(manifest, entry)
            if aux.rgb is not None:
                panels.append(aux.rgb.astype(np.uint8))
            if entry.gt_mask is not None:
                panels.append(_render_panel(png_to_mask(manifest.resolve(entry.gt_mask), taxonomy), taxonomy))
            shown = res.prediction if res.prediction is not None else res.seeds
            panels.append(_render_panel(shown, taxonomy))
            Image.fromarray(np.concatenate(panels, axis=1)).save(comp_dir / f"{entry.id}.png")
        per_image.append(doc)

    aggregate = acc.report() if have_gt else None
    report_doc = {
        "pipeline": spec.name.value if spec.name else "baseline",
        "images": per_image,
    }
    if aggregate is not None:
        report_doc["aggregate"] = aggregate.to_dict(taxonomy)
        report_to_csv(aggregate, taxonomy, out_dir / "report.csv")
    (out_dir / "report.json").write_text(json.dumps(report_doc, indent=2), encoding="utf-8")
    text = [f"pipeline: {report_doc['pipeline']}"]
    if aggregate is not None:
        text.append(format_report(aggregate, taxonomy))
    else:
        covs = [d.get("seed_coverage") for d in per_image if "seed_coverage" in d]
        if covs:
            text.append(f"mean seed coverage: {float(np.mean(covs)):.4f}")
    (out_dir / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    return RunResult(out_dir, per_image, aggregate)


def _distinct_colors(n):
    colors = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / max(n, 1), 0.85, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    if len({c for c in colors}) != n:
        raise WssegError(f"cannot build {n} distinct colors")
    return colors


def make_synthetic_fixture(
    out_dir,
    n_images: int = 50,
    n_classes: int = 4,
    size: int = 64,
    blobs_per_class: int = 3,
    blob_sigma: float = None,
    activation_blur: float = 1.5,
    noise: float = 0.3,
    seed: int = 0,
) -> Manifest:
    """Generate ground-truth blob masks plus stacks that are Gaussian-blurred,
    noise-corrupted one-hot encodings of them. Fully determined by `seed`."""
    if n_classes < 2:
        raise WssegError("fixture needs at least two classes")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    blob_sigma = blob_sigma if blob_sigma is not None else size / 5.0

    taxonomy = ClassTaxonomy(
        tuple((f"class{i:02d}", c) for i, c in enumerate(_distinct_colors(n_classes))),
        BackgroundMode.NONE,
    )
    write_taxonomy(taxonomy, out_dir / "taxonomy.json")
    palette = np.array(taxonomy.colors, dtype=np.uint8)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    entries = []
    for i in range(n_images):
        image_id = f"img{i:04d}"
        n_present = int(rng.integers(2, n_classes + 1))
        present = np.sort(rng.choice(n_classes, size=n_present, replace=False))
        scores = np.zeros((n_present, size, size))
        for k in range(n_present):
            for _ in range(int(rng.integers(1, blobs_per_class + 1))):
                cy, cx = rng.uniform(0, size, size=2)
                s = blob_sigma * rng.uniform(0.6, 1.4)
                scores[k] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        gt = present[np.argmax(scores, axis=0)].astype(np.uint8)
        present_in_gt = np.unique(gt)

        onehot = np.zeros((n_classes, size, size))
        for c in present_in_gt:
            onehot[c] = gt == c
        maps = onehot
        if activation_blur > 0:
            maps = np.stack([ndimage.gaussian_filter(m, activation_blur) for m in maps])
        if noise > 0:
            maps = maps + noise * rng.standard_normal(maps.shape)
        maps = np.clip(maps, 0.0, 1.0)
        conf = np.where(
            np.isin(np.arange(n_classes), present_in_gt),
            rng.uniform(0.7, 1.0, n_classes),
            rng.uniform(0.05, 0.3, n_classes),
        )

        stack_path = f"{image_id}.wsas"
        write_stack(ActivationStack(maps, conf, image_id), out_dir / stack_path)
        gt_path = f"{image_id}_gt.png"
        mask_to_png(LabelMask(gt), taxonomy, out_dir / gt_path)
        rgb_path = f"{image_id}_rgb.png"
        Image.fromarray(palette[gt]).save(out_dir / rgb_path)
        edge = _boundary_from_gt(gt)
        boundary_path = f"{image_id}_boundary.wsas"
        write_stack(
            ActivationStack(edge[None], np.ones(1), f"{image_id}_boundary"),
            out_dir / boundary_path,
        )
        entries.append(
            ManifestImage(
                id=image_id,
                stack=stack_path,
                labels=tuple(taxonomy.names[c] for c in present_in_gt),
                gt_mask=gt_path,
                rgb=rgb_path,
                boundary=boundary_path,
            )
        )
    manifest = Manifest(tuple(entries), "taxonomy.json", root=out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _boundary_from_gt(gt):
    edge = np.zeros(gt.shape)
    edge[:-1, :][gt[:-1, :] != gt[1:, :]] = 1.0
    edge[1:, :][gt[:-1, :] != gt[1:, :]] = 1.0
    edge[:, :-1][gt[:, :-1] != gt[:, 1:]] = 1.0
    edge[:, 1:][gt[:, :-1] != gt[:, 1:]] = 1.0
    return edge
