"""Independent brute-force oracles used to freeze expected values.

Everything here is deliberately naive: pure-python pixel enumeration with
integer counts, BFS flood fill, dense matrix powers. The production code must
agree with these, never the other way around.
"""

from collections import deque
from fractions import Fraction

import numpy as np


def enumerate_counts(pred, gt, n_classes, sentinel=255):
    """Per-class (intersection, pred, gt) pixel counts, pure python ints.

    Pixels whose gt is the sentinel are ignored entirely; sentinel predictions
    count toward no class.
    """
    inter = [0] * n_classes
    pred_ct = [0] * n_classes
    gt_ct = [0] * n_classes
    h, w = len(pred), len(pred[0])
    for y in range(h):
        for x in range(w):
            g = int(gt[y][x])
            if g == sentinel:
                continue
            p = int(pred[y][x])
            gt_ct[g] += 1
            if p != sentinel:
                pred_ct[p] += 1
                if p == g:
                    inter[g] += 1
    return inter, pred_ct, gt_ct


def oracle_iou_recall(pred, gt, n_classes, sentinel=255):
    """Per-class IoU / recall arrays (NaN for absent classes) plus their means.

    Counts are exact integers; the final divisions use the same IEEE float64
    operations the library uses, so agreement must be exact.
    """
    inter, pred_ct, gt_ct = enumerate_counts(pred, gt, n_classes, sentinel)
    iou = np.full(n_classes, np.nan)
    recall = np.full(n_classes, np.nan)
    for c in range(n_classes):
        union = gt_ct[c] + pred_ct[c] - inter[c]
        if union > 0:
            iou[c] = inter[c] / union
        if gt_ct[c] > 0:
            recall[c] = inter[c] / gt_ct[c]
    miou = float(np.nanmean(iou)) if not np.isnan(iou).all() else float("nan")
    mrec = float(np.nanmean(recall)) if not np.isnan(recall).all() else float("nan")
    return iou, miou, recall, mrec


def oracle_iou_fractions(pred, gt, n_classes, sentinel=255):
    """Per-class IoU as exact Fractions, for hand-verifiable worked cases."""
    inter, pred_ct, gt_ct = enumerate_counts(pred, gt, n_classes, sentinel)
    out = {}
    for c in range(n_classes):
        union = gt_ct[c] + pred_ct[c] - inter[c]
        if union > 0:
            out[c] = Fraction(inter[c], union)
    return out


def flood_fill_components(labels, eight_connected=True, sentinel=255):
    """Connected components per class via BFS. Returns dict class -> count."""
    h, w = labels.shape
    visited = np.zeros((h, w), dtype=bool)
    if eight_connected:
        offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    counts = {}
    for y0 in range(h):
        for x0 in range(w):
            if visited[y0, x0] or labels[y0, x0] == sentinel:
                continue
            cls = int(labels[y0, x0])
            counts[cls] = counts.get(cls, 0) + 1
            queue = deque([(y0, x0)])
            visited[y0, x0] = True
            while queue:
                y, x = queue.popleft()
                for dy, dx in offsets:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not visited[ny, nx] and labels[ny, nx] == cls:
                        visited[ny, nx] = True
                        queue.append((ny, nx))
    return counts


def dense_walk(transition, maps, steps):
    """Propagate maps with an explicit dense matrix power."""
    t = np.asarray(transition.todense()) if hasattr(transition, "todense") else np.asarray(transition)
    power = np.linalg.matrix_power(t.T, steps)
    c = maps.shape[0]
    n = maps.shape[1] * maps.shape[2]
    flat = maps.reshape(c, n)
    return (power @ flat.T).T.reshape(maps.shape)


def exhaustive_threshold_pick(coverages_by_threshold, target):
    """Smallest threshold with coverage < target; (largest, False) if none."""
    qualifying = [t for t, cov in coverages_by_threshold.items() if cov < target]
    if not qualifying:
        return max(coverages_by_threshold), False
    return min(qualifying), True
