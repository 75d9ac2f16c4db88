"""Evaluation metrics: per-class IoU / mIoU, mean recall, seed coverage,
confusion matrices, ground-truth instance counts and class co-occurrence.

Dataset-level scores accumulate intersection/union counts globally across
images before dividing (the benchmark convention), never by averaging
per-image scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import UNLABELED, ClassTaxonomy, LabelMask
from .errors import DimensionMismatchError, EmptyCollectionError


class Connectivity(Enum):
    FOUR = 4
    EIGHT = 8


@dataclass(frozen=True)
class EvalReport:
    """Per-class and mean scores. NaN in a per-class slot means the class was
    absent (empty union / empty ground truth) and is excluded from the mean."""

    per_class_iou: np.ndarray
    miou: float
    per_class_recall: np.ndarray
    mean_recall: float
    coverage: float
    confusion: np.ndarray

    def to_dict(self, taxonomy: ClassTaxonomy = None):
        def listify(a):
            return [None if np.isnan(v) else float(v) for v in a]

        doc = {
            "per_class_iou": listify(self.per_class_iou),
            "miou": self.miou,
            "per_class_recall": listify(self.per_class_recall),
            "mean_recall": self.mean_recall,
            "coverage": self.coverage,
            "confusion": self.confusion.tolist(),
        }
        if taxonomy is not None:
            doc["classes"] = list(taxonomy.names)
        return doc


def confusion_to_csv(report: EvalReport, taxonomy: ClassTaxonomy, path) -> None:
    """Confusion matrix as CSV: rows ground truth, columns predictions."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["gt\\pred", *taxonomy.names])
        for i, name in enumerate(taxonomy.names):
            writer.writerow([name, *report.confusion[i].tolist()])


def report_to_csv(report: EvalReport, taxonomy: ClassTaxonomy, path) -> None:
    """Per-class IoU/recall table as CSV (empty cells for absent classes)."""
    import csv

    def cell(v):
        return "" if np.isnan(v) else f"{v:.6f}"

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "iou", "recall"])
        for i, name in enumerate(taxonomy.names):
            writer.writerow([name, cell(report.per_class_iou[i]), cell(report.per_class_recall[i])])
        writer.writerow(["mean", f"{report.miou:.6f}", f"{report.mean_recall:.6f}"])


def format_report(report: EvalReport, taxonomy: ClassTaxonomy) -> str:
    """Aligned-column plain-text rendering of an EvalReport."""
    width = max(len(n) for n in taxonomy.names)
    lines = [f"{'class'.ljust(width)}  {'IoU':>8}  {'recall':>8}"]
    for i, name in enumerate(taxonomy.names):
        iou = report.per_class_iou[i]
        rec = report.per_class_recall[i]
        iou_s = "absent" if np.isnan(iou) else f"{iou:.4f}"
        rec_s = "absent" if np.isnan(rec) else f"{rec:.4f}"
        lines.append(f"{name.ljust(width)}  {iou_s:>8}  {rec_s:>8}")
    lines.append(f"{'mIoU'.ljust(width)}  {report.miou:>8.4f}")
    lines.append(f"{'mean recall'.ljust(width)}  {report.mean_recall:>8.4f}")
    lines.append(f"{'coverage'.ljust(width)}  {report.coverage:>8.4f}")
    return "\n".join(lines)


class EvalAccumulator:
    """Accumulates per-class intersection / prediction / ground-truth pixel
    counts over any number of mask pairs; order-independent and exact
    (integer arithmetic throughout)."""

    def __init__(self, taxonomy: ClassTaxonomy):
        self.taxonomy = taxonomy
        c = len(taxonomy)
        self._inter = np.zeros(c, dtype=np.int64)
        self._pred = np.zeros(c, dtype=np.int64)
        self._gt = np.zeros(c, dtype=np.int64)
        self._confusion = np.zeros((c, c), dtype=np.int64)
        self._covered = 0
        self._pixels = 0
        self._coverages = []

    def add(self, pred: LabelMask, gt: LabelMask):
        if pred.labels.shape != gt.labels.shape:
            raise DimensionMismatchError(
                f"pred {pred.labels.shape} vs gt {gt.labels.shape}"
            )
        c = len(self.taxonomy)
        p = pred.labels.ravel().astype(np.int64)
        g = gt.labels.ravel().astype(np.int64)
        valid = g != UNLABELED  # sentinel gt pixels are excluded from all counts
        pv, gv = p[valid], g[valid]
        pred_valid = pv != UNLABELED
        self._gt += np.bincount(gv, minlength=c)[:c]
        self._pred += np.bincount(pv[pred_valid], minlength=c)[:c]
        agree = pred_valid & (pv == gv)
        self._inter += np.bincount(gv[agree], minlength=c)[:c]
        both = pred_valid
        self._confusion += np.bincount(
            gv[both] * c + pv[both], minlength=c * c
        ).reshape(c, c)
        self._coverages.append(float((p != UNLABELED).mean()) if p.size else 0.0)

    def precision(self):
        """(per-class precision with NaN for classes never predicted, mean)."""
        with np.errstate(invalid="ignore"):
            prec = np.where(self._pred > 0, self._inter / np.maximum(self._pred, 1), np.nan)
        mean = float(np.nanmean(prec)) if np.any(self._pred > 0) else float("nan")
        return prec, mean

    def report(self) -> EvalReport:
        union = self._gt + self._pred - self._inter
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(union > 0, self._inter / np.maximum(union, 1), np.nan)
            recall = np.where(self._gt > 0, self._inter / np.maximum(self._gt, 1), np.nan)
        iou = np.where(union > 0, iou, np.nan)
        recall = np.where(self._gt > 0, recall, np.nan)
        miou = float(np.nanmean(iou)) if np.any(union > 0) else float("nan")
        mrec = float(np.nanmean(recall)) if np.any(self._gt > 0) else float("nan")
        cov = float(np.mean(self._coverages)) if self._coverages else 0.0
        return EvalReport(iou, miou, recall, mrec, cov, self._confusion.copy())


def miou(pred: LabelMask, gt: LabelMask, taxonomy: ClassTaxonomy) -> EvalReport:
    """Single-pair evaluation report (per-class IoU, mIoU, recall, confusion)."""
    acc = EvalAccumulator(taxonomy)
    acc.add(pred, gt)
    return acc.report()


def mean_recall(pred: LabelMask, gt: LabelMask, taxonomy: ClassTaxonomy) -> float:
    return miou(pred, gt, taxonomy).mean_recall


def coverage(seed: LabelMask) -> float:
    """Fraction of pixels carrying any label."""
    labels = seed.labels
    if labels.size == 0:
        return 0.0
    return float((labels != UNLABELED).mean())


class _UnionFind:
    """Union-find over flat pixel indices with path compression and union by size."""

    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def instance_count(gt: LabelMask, connectivity: Connectivity = Connectivity.EIGHT):
    """Connected components per class (sentinel excluded).

    Returns (per_class: dict class->count, total).
    """
    labels = gt.labels
    h, w = labels.shape
    uf = _UnionFind(h * w)
    offsets = [(0, 1), (1, 0)]
    if connectivity is Connectivity.EIGHT:
        offsets += [(1, 1), (1, -1)]
    flat = labels.ravel()
    for dy, dx in offsets:
        ys = slice(0, h - dy)
        yd = slice(dy, h)
        if dx >= 0:
            xs, xd = slice(0, w - dx), slice(dx, w)
        else:
            xs, xd = slice(-dx, w), slice(0, w + dx)
        a = labels[ys, xs]
        b = labels[yd, xd]
        match = (a == b) & (a != UNLABELED)
        src = (np.arange(h)[ys, None] * w + np.arange(w)[None, xs])[match]
        dst = (np.arange(h)[yd, None] * w + np.arange(w)[None, xd])[match]
        for s, d in zip(src.tolist(), dst.tolist()):
            uf.union(s, d)
    per_class = {}
    seen_roots = set()
    for idx in range(h * w):
        if flat[idx] == UNLABELED:
            continue
        root = uf.find(idx)
        if root not in seen_roots:
            seen_roots.add(root)
            cls = int(flat[idx])
            per_class[cls] = per_class.get(cls, 0) + 1
    return per_class, sum(per_class.values())


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """Image-level class co-presence counts and the row-conditional normalization
    normalized[i][j] = P(class j present | class i present)."""

    counts: np.ndarray
    normalized: np.ndarray

    def to_dict(self, taxonomy: ClassTaxonomy = None):
        doc = {"counts": self.counts.tolist(), "normalized": self.normalized.tolist()}
        if taxonomy is not None:
            doc["classes"] = list(taxonomy.names)
        return doc


def cooccurrence(label_sets, taxonomy: ClassTaxonomy) -> CooccurrenceMatrix:
    """label_sets: iterable of per-image label collections (class names or indices);
    duplicates within one image count once."""
    c = len(taxonomy)
    counts = np.zeros((c, c), dtype=np.int64)
    n_images = 0
    for labels in label_sets:
        idx = sorted(
            {taxonomy.index_of(l) if isinstance(l, str) else int(l) for l in labels}
        )
        n_images += 1
        for i in idx:
            for j in idx:
                counts[i, j] += 1
    if n_images == 0:
        raise EmptyCollectionError("co-occurrence needs at least one image")
    diag = np.diag(counts).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(diag[:, None] > 0, counts / np.maximum(diag[:, None], 1), 0.0)
    return CooccurrenceMatrix(counts, normalized)
