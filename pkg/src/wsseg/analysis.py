"""Method-selection heuristics and training-set balancing.

Encodes three empirical rules:
  * choose self-supervised refinement when mean seed recall < 40%, direct
    refinement at >= 40%;
  * prefer a coarse-map backbone when the mean ground-truth instance count
    per present class is <= 1.65, a fine-map backbone at >= 1.68;
  * reduce class co-occurrence by dropping the half of the training images
    with the largest summed label frequency.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import UNLABELED, ClassTaxonomy
from .errors import EmptyCollectionError, MissingGroundTruthError
from .metrics import Connectivity, CooccurrenceMatrix, EvalAccumulator, cooccurrence, instance_count
from .seeds import SeedPolicy, generate_seeds


RECOMMEND_SELF_SUPERVISED = "self_supervised"
RECOMMEND_DIRECT_REFINEMENT = "direct_refinement"
RECOMMEND_COARSE_MAP_NET = "coarse_map_net"
RECOMMEND_FINE_MAP_NET = "fine_map_net"
RECOMMEND_INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class AdvisorVerdict:
    recommendation: str
    mean_seed_recall: float
    mean_seed_coverage: float
    rationale: str


@dataclass(frozen=True)
class SparsenessVerdict:
    mean_gt_instances: float
    recommendation: str


def advise_method(pairs, taxonomy: ClassTaxonomy, recall_cutoff: float = 0.40) -> AdvisorVerdict:
    """pairs: sequence of (seed_mask, gt_mask or None). Recall is accumulated
    globally per class across the collection, then averaged over classes.
    The cutoff is inclusive upward: exactly recall_cutoff -> direct refinement."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyCollectionError("advisor needs at least one image")
    acc = EvalAccumulator(taxonomy)
    for seed, gt in pairs:
        if gt is None:
            raise MissingGroundTruthError("every image needs a ground-truth mask")
        acc.add(seed, gt)
    report = acc.report()
    recall = report.mean_recall
    if recall < recall_cutoff:
        rec = RECOMMEND_SELF_SUPERVISED
        why = (
            f"mean seed recall {recall:.1%} is below {recall_cutoff:.0%}: seeds miss most of the "
            "ground truth, so train a segmentation network on them and let it expand"
        )
    else:
        rec = RECOMMEND_DIRECT_REFINEMENT
        why = (
            f"mean seed recall {recall:.1%} is at or above {recall_cutoff:.0%}: seeds already cover "
            "the ground truth, so refine the activation maps directly"
        )
    return AdvisorVerdict(rec, recall, report.coverage, why)


def advise_sparseness(
    gt_masks,
    low_cutoff: float = 1.65,
    high_cutoff: float = 1.68,
    connectivity: Connectivity = Connectivity.EIGHT,
    per_present_class: bool = True,
) -> SparsenessVerdict:
    """Per image: connected components / distinct classes present (or the raw
    component total with per_present_class=False); averaged over images with
    at least one labeled pixel."""
    per_image = []
    for gt in gt_masks:
        per_class, total = instance_count(gt, connectivity)
        if not per_class:
            continue
        per_image.append(total / len(per_class) if per_present_class else float(total))
    if not per_image:
        raise EmptyCollectionError("sparseness advisor needs at least one non-empty ground-truth mask")
    mean_inst = float(np.mean(per_image))
    if mean_inst <= low_cutoff:
        rec = RECOMMEND_COARSE_MAP_NET
    elif mean_inst >= high_cutoff:
        rec = RECOMMEND_FINE_MAP_NET
    else:
        rec = RECOMMEND_INDETERMINATE
    return SparsenessVerdict(mean_inst, rec)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    mean_coverage: float
    mean_recall: float = None
    mean_precision: float = None


def sweep_thresholds(collection, policy_template: SeedPolicy, taxonomy: ClassTaxonomy, grid):
    """Seed-quality table across a threshold grid.

    collection: (stack, labels[, extra kwargs][, gt_mask]) tuples; gt_mask
    may be None. Rows report mean coverage always, global-accumulated mean
    recall and precision when ground truth is available.
    """
    entries = []
    for entry in collection:
        stack, labels = entry[0], entry[1]
        extra, gt = {}, None
        for item in entry[2:]:
            if isinstance(item, dict):
                extra = item
            else:
                gt = item
        entries.append((stack, labels, extra, gt))
    if not entries:
        raise EmptyCollectionError("sweep needs at least one stack")
    rows = []
    for thr in sorted(grid, reverse=True):
        policy = replace(policy_template, fg_threshold=thr)
        covs = []
        acc = EvalAccumulator(taxonomy)
        have_gt = False
        for stack, labels, extra, gt in entries:
            mask = generate_seeds(stack, labels, policy, taxonomy, **extra)
            covs.append(float((mask.labels != UNLABELED).mean()))
            if gt is not None:
                acc.add(mask, gt)
                have_gt = True
        if have_gt:
            report = acc.report()
            _, mean_prec = acc.precision()
            rows.append(SweepRow(thr, float(np.mean(covs)), report.mean_recall, mean_prec))
        else:
            rows.append(SweepRow(thr, float(np.mean(covs))))
    return rows


def write_sweep_table(rows, json_path=None, csv_path=None):
    docs = [
        {
            "threshold": r.threshold,
            "mean_coverage": r.mean_coverage,
            "mean_recall": r.mean_recall,
            "mean_precision": r.mean_precision,
        }
        for r in rows
    ]
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(docs, f, indent=2)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["threshold", "mean_coverage", "mean_recall", "mean_precision"])
            writer.writeheader()
            writer.writerows(docs)
    return docs


def render_sweep_curve(rows, path):
    """Coverage / recall / precision vs threshold as a PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    thresholds = [r.threshold for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, [r.mean_coverage for r in rows], marker="o", label="coverage")
    if any(r.mean_recall is not None for r in rows):
        ax.plot(thresholds, [r.mean_recall for r in rows], marker="s", label="recall")
        ax.plot(thresholds, [r.mean_precision for r in rows], marker="^", label="precision")
    ax.set_xlabel("seed threshold")
    ax.set_ylabel("mean over images")
    ax.set_ylim(0, 1)
    ax.invert_xaxis()
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


@dataclass(frozen=True)
class BalanceResult:
    kept_ids: tuple
    removed_ids: tuple
    before: CooccurrenceMatrix
    after: CooccurrenceMatrix


def balance_dataset(image_labels, taxonomy: ClassTaxonomy, removal_fraction: float = 0.5) -> BalanceResult:
    """Drop the ceil(fraction*N) images whose labels are globally most frequent.

    image_labels: sequence of (image_id, label collection). An image's weight
    is the sum over its labels of that label's dataset-wide image count.
    Weight ties remove the lexicographically smaller id first.
    """
    items = [(str(i), tuple(labels)) for i, labels in image_labels]
    if not items:
        raise EmptyCollectionError("balancing needs at least one image")
    label_count = {}
    for _, labels in items:
        for l in set(labels):
            label_count[l] = label_count.get(l, 0) + 1
    weights = {i: sum(label_count[l] for l in set(labels)) for i, labels in items}
    k = math.ceil(removal_fraction * len(items))
    by_weight = sorted(items, key=lambda it: (-weights[it[0]], it[0]))
    removed = by_weight[:k]
    removed_ids = {i for i, _ in removed}
    kept = [it for it in items if it[0] not in removed_ids]
    before = cooccurrence([labels for _, labels in items], taxonomy)
    if kept:
        after = cooccurrence([labels for _, labels in kept], taxonomy)
    else:
        c = len(taxonomy)
        after = CooccurrenceMatrix(np.zeros((c, c), dtype=np.int64), np.zeros((c, c)))
    return BalanceResult(
        tuple(i for i, _ in kept), tuple(sorted(removed_ids)), before, after
    )
