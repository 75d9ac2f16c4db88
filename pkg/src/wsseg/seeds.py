"""Weak localization cue (seed) generation from activation stacks.

Covers the four seeding recipes this toolkit reproduces: relative-max
thresholding with a lowest-percentile background cue, absolute thresholding
with a low-activation background rule, the 90%-of-max variant with a
white-level background, and external background activation stacks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import ndimage

from .core import UNLABELED, ActivationStack, ClassTaxonomy, LabelMask
from .errors import DimensionMismatchError, EmptyCollectionError, WssegError


class ThresholdMode(Enum):
    REL_MAX = "rel_max"
    ABSOLUTE = "absolute"


class BackgroundSource(Enum):
    NONE = "none"
    LOWEST_PERCENTILE = "lowest_percentile"
    WHITE_LEVEL = "white_level"
    EXTERNAL_MAP = "external_map"


class OverlapRule(Enum):
    SMALLER_CUE_WINS = "smaller_cue_wins"
    CONFIDENCE_WINS = "confidence_wins"


@dataclass(frozen=True)
class SeedPolicy:
    fg_threshold_mode: ThresholdMode = ThresholdMode.REL_MAX
    fg_threshold: float = 0.20
    bg_source: BackgroundSource = BackgroundSource.NONE
    bg_percentile: float = 0.10
    median_kernel: int = 3
    overlap_rule: OverlapRule = OverlapRule.SMALLER_CUE_WINS
    # white-level background synthesis (0-255 mean-RGB input)
    sigmoid_scale: float = 0.15
    sigmoid_shift: float = 208.0
    blur_sigma: float = 2.0
    # mark pixels with every foreground activation below this (and no seed) as background
    low_activation_cutoff: float = None

    def __post_init__(self):
        if self.fg_threshold_mode is ThresholdMode.REL_MAX and not (0 < self.fg_threshold <= 1):
            raise WssegError("REL_MAX threshold must lie in (0, 1]")
        if not (0 < self.bg_percentile < 1):
            raise WssegError("bg_percentile must lie in (0, 1)")
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise WssegError("median_kernel must be odd and positive")


# Named presets for the four seeding recipes.
def sec_policy(**kw) -> SeedPolicy:
    return SeedPolicy(ThresholdMode.REL_MAX, 0.20, BackgroundSource.LOWEST_PERCENTILE, **kw)


def dsrg_policy(**kw) -> SeedPolicy:
    return SeedPolicy(ThresholdMode.REL_MAX, 0.20, BackgroundSource.LOWEST_PERCENTILE, **kw)


def irn_policy(**kw) -> SeedPolicy:
    kw.setdefault("low_activation_cutoff", 0.05)
    return SeedPolicy(ThresholdMode.ABSOLUTE, 0.30, BackgroundSource.NONE, **kw)


def adp_policy(**kw) -> SeedPolicy:
    return SeedPolicy(ThresholdMode.REL_MAX, 0.90, BackgroundSource.WHITE_LEVEL, **kw)


def threshold_class(class_map, policy: SeedPolicy):
    """Boolean cue for one class map (expected normalized to [0, 1])."""
    m = np.asarray(class_map, dtype=np.float64)
    peak = m.max() if m.size else 0.0
    if peak <= 0:
        return np.zeros(m.shape, dtype=bool)
    if policy.fg_threshold_mode is ThresholdMode.REL_MAX:
        return m >= policy.fg_threshold * peak
    return m >= policy.fg_threshold


def synthesize_background_lowest(bg_stack: ActivationStack, policy: SeedPolicy):
    """Sum class maps, median-filter, and cue the lowest-activating pixel fraction.

    Ties at the percentile boundary break by row-major pixel order.
    """
    summed = bg_stack.maps.sum(axis=0)
    filtered = ndimage.median_filter(summed, size=policy.median_kernel, mode="nearest")
    h, w = filtered.shape
    k = int(np.floor(policy.bg_percentile * h * w))
    cue = np.zeros(h * w, dtype=bool)
    if k > 0:
        order = np.argsort(filtered.ravel(), kind="stable")
        cue[order[:k]] = True
    return cue.reshape(h, w)


def synthesize_background_white(mean_rgb, transparent_stack, sigmoid_scale, sigmoid_shift, blur_sigma):
    """Background activation from white illumination.

    Scaled-shifted sigmoid of the mean-RGB image, minus the strongest
    transparent-staining activation, clamped to [0, 1], then Gaussian-blurred.
    """
    rgb = np.asarray(mean_rgb, dtype=np.float64)
    white = 1.0 / (1.0 + np.exp(-sigmoid_scale * (rgb - sigmoid_shift)))
    if transparent_stack is not None and transparent_stack.num_classes > 0:
        if transparent_stack.maps.shape[1:] != rgb.shape:
            raise DimensionMismatchError(
                f"transparent stack {transparent_stack.maps.shape[1:]} vs mean-RGB {rgb.shape}"
            )
        white = white - transparent_stack.maps.max(axis=0)
    out = np.clip(white, 0.0, 1.0)
    if blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=blur_sigma)
        out = np.clip(out, 0.0, 1.0)
    return out


def external_background_map(bg_stack: ActivationStack):
    """Background activation from an external stack: 1 - minmax(sum of maps)."""
    summed = bg_stack.maps.sum(axis=0)
    lo, hi = summed.min(), summed.max()
    if hi > lo:
        summed = (summed - lo) / (hi - lo)
    else:
        summed = np.zeros_like(summed)
    return 1.0 - summed


def resolve_overlaps(cues, rule: OverlapRule = OverlapRule.SMALLER_CUE_WINS, confidences=None) -> LabelMask:
    """Merge per-class boolean cues into a label mask.

    cues: dict class_index -> H×W bool. Conflicts go to the smaller cue
    (or higher confidence), ties to the lower class index.
    """
    items = sorted(cues.items())
    if not items:
        raise EmptyCollectionError("no cues to resolve")
    shape = items[0][1].shape
    for _, cue in items:
        if cue.shape != shape:
            raise DimensionMismatchError("cues must share dimensions")
    if rule is OverlapRule.SMALLER_CUE_WINS:
        # precedence key: smaller cue first, then lower class index
        def key(item):
            return (int(item[1].sum()), item[0])
    else:
        if confidences is None:
            raise WssegError("CONFIDENCE_WINS needs per-class confidences")

        def key(item):
            return (-float(confidences[item[0]]), item[0])

    labels = np.full(shape, UNLABELED, dtype=np.uint8)
    # paint lowest precedence first so the winner lands last
    for cls, cue in sorted(items, key=key, reverse=True):
        labels[cue] = cls
    return LabelMask(labels)


def generate_seeds(
    stack: ActivationStack,
    image_labels,
    policy: SeedPolicy,
    taxonomy: ClassTaxonomy,
    bg_stack: ActivationStack = None,
    mean_rgb=None,
    transparent_stack: ActivationStack = None,
    bg_map=None,
) -> LabelMask:
    """Seed mask from a normalized stack.

    stack channels follow taxonomy.foreground_indices order. Only classes in
    image_labels are thresholded; absent classes never seed. Background is
    synthesized per policy.bg_source, then overlaps are resolved; finally the
    low-activation background rule runs if the policy carries a cutoff.
    Taxonomies without a background class skip both background mechanisms
    (every class is foreground there).
    """
    fg_indices = taxonomy.foreground_indices
    if stack.num_classes != len(fg_indices):
        raise DimensionMismatchError(
            f"stack holds {stack.num_classes} maps, taxonomy has {len(fg_indices)} foreground classes"
        )
    label_idx = {taxonomy.index_of(l) if isinstance(l, str) else int(l) for l in image_labels}

    cues = {}
    confidences = {}
    for channel, cls in enumerate(fg_indices):
        if cls not in label_idx:
            continue
        cues[cls] = threshold_class(stack.maps[channel], policy)
        confidences[cls] = float(stack.confidences[channel])

    bg_idx = taxonomy.background_index
    if policy.bg_source is not BackgroundSource.NONE and bg_idx is not None:
        if policy.bg_source is BackgroundSource.LOWEST_PERCENTILE:
            if bg_stack is None:
                raise WssegError("LOWEST_PERCENTILE background needs a background stack")
            cues[bg_idx] = synthesize_background_lowest(bg_stack, policy)
        elif policy.bg_source is BackgroundSource.WHITE_LEVEL:
            if mean_rgb is None:
                raise WssegError("WHITE_LEVEL background needs a mean-RGB image")
            activation = synthesize_background_white(
                mean_rgb, transparent_stack, policy.sigmoid_scale, policy.sigmoid_shift, policy.blur_sigma
            )
            cues[bg_idx] = threshold_class(activation, policy)
        else:  # EXTERNAL_MAP
            if bg_map is None and bg_stack is not None:
                bg_map = external_background_map(bg_stack)
            if bg_map is None:
                raise WssegError("EXTERNAL_MAP background needs a background map or stack")
            cues[bg_idx] = threshold_class(np.asarray(bg_map, dtype=np.float64), policy)
        confidences[bg_idx] = 1.0

    if not cues:
        return LabelMask(np.full((stack.height, stack.width), UNLABELED, dtype=np.uint8))

    mask = resolve_overlaps(cues, policy.overlap_rule, confidences)

    if policy.low_activation_cutoff is not None and bg_idx is not None:
        labels = mask.labels.copy()
        if label_idx:
            present = [ch for ch, cls in enumerate(fg_indices) if cls in label_idx]
            fg_max = stack.maps[present].max(axis=0)
        else:
            fg_max = np.zeros((stack.height, stack.width))
        quiet = (fg_max < policy.low_activation_cutoff) & (labels == UNLABELED)
        labels[quiet] = bg_idx
        mask = LabelMask(labels)
    return mask


@dataclass(frozen=True)
class CoverageSearchResult:
    policy: SeedPolicy
    threshold: float
    mean_coverage: float
    target_met: bool


DEFAULT_GRID = tuple(round(0.90 - 0.05 * i, 2) for i in range(15))  # 0.90 .. 0.20


def coverage_target_search(
    collection,
    policy_template: SeedPolicy,
    taxonomy: ClassTaxonomy,
    target: float = 0.5,
    grid=DEFAULT_GRID,
) -> CoverageSearchResult:
    """Pick the seed threshold whose mean coverage stays just below target.

    collection: sequence of (stack, image_labels) pairs, stacks normalized;
    entries may also carry a dict of generate_seeds keyword inputs as a third
    element. Returns the smallest grid threshold with mean coverage < target,
    or the largest grid threshold flagged target_met=False if none qualifies.
    """
    entries = list(collection)
    if not entries:
        raise EmptyCollectionError("coverage search needs at least one stack")
    grid = sorted(grid, reverse=True)
    table = {
        thr: mean_seed_coverage(entries, replace(policy_template, fg_threshold=thr), taxonomy)
        for thr in grid
    }
    qualifying = [thr for thr in grid if table[thr] < target]
    if not qualifying:
        top = grid[0]
        return CoverageSearchResult(
            replace(policy_template, fg_threshold=top), top, table[top], False
        )
    chosen = min(qualifying)
    return CoverageSearchResult(
        replace(policy_template, fg_threshold=chosen), chosen, table[chosen], True
    )


def mean_seed_coverage(entries, policy: SeedPolicy, taxonomy: ClassTaxonomy) -> float:
    """Mean over images of the fraction of seeded pixels under a policy."""
    covs = []
    for entry in entries:
        stack, labels = entry[0], entry[1]
        extra = entry[2] if len(entry) > 2 else {}
        mask = generate_seeds(stack, labels, policy, taxonomy, **extra)
        covs.append(float((mask.labels != UNLABELED).mean()))
    return float(np.mean(covs))
