"""Seed expansion: seeded region growing and boundary-gated random-walk propagation.

The walk's transition matrix is built from a class boundary map: the affinity
between two pixels is (1 - max boundary value on the discrete segment between
them) ** beta, so a boundary anywhere on the line of sight blocks the pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from .core import UNLABELED, ActivationStack, BoundaryMap, LabelMask
from .errors import DimensionMismatchError, StochasticityViolationError, WssegError
from .metrics import Connectivity


class FeatureSource(Enum):
    ACTIVATION_VECTOR = "activation_vector"
    RGB = "rgb"


@dataclass(frozen=True)
class GrowPolicy:
    similarity_threshold: float = 0.2
    feature_source: FeatureSource = FeatureSource.ACTIVATION_VECTOR
    connectivity: Connectivity = Connectivity.FOUR
    max_iterations: int = 1000

    def __post_init__(self):
        if self.similarity_threshold < 0:
            raise WssegError("similarity_threshold must be non-negative")
        if self.max_iterations < 1:
            raise WssegError("max_iterations must be at least 1")


@dataclass(frozen=True)
class WalkPolicy:
    beta: float = 8.0
    steps: int = 16
    radius: int = 2
    renormalize: bool = False
    connectivity: Connectivity = Connectivity.EIGHT

    def __post_init__(self):
        if self.beta < 1:
            raise WssegError("beta must be at least 1")
        if self.steps < 1:
            raise WssegError("steps must be at least 1")
        if self.radius < 1:
            raise WssegError("radius must be at least 1")


_OFFSETS = {
    Connectivity.FOUR: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    Connectivity.EIGHT: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


def region_grow(seeds: LabelMask, features, policy: GrowPolicy = GrowPolicy()) -> LabelMask:
    """Grow seed labels into unlabeled pixels, breadth-first by sweeps.

    An unlabeled pixel adopts an adjacent label when the Euclidean distance
    between the two pixels' feature vectors is below the threshold. Within a
    sweep, conflicts resolve by smallest distance, then lower class index.
    Seeded pixels never change label.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[None]
    if feats.shape[1:] != seeds.labels.shape:
        raise DimensionMismatchError(f"features {feats.shape[1:]} vs seeds {seeds.labels.shape}")
    h, w = seeds.labels.shape
    labels = seeds.labels.copy()
    offsets = _OFFSETS[policy.connectivity]
    thr = policy.similarity_threshold

    for _ in range(policy.max_iterations):
        best_dist = np.full((h, w), np.inf)
        best_label = np.full((h, w), UNLABELED, dtype=np.int64)
        unlabeled = labels == UNLABELED
        if not unlabeled.any():
            break
        for dy, dx in offsets:
            # pixel p at (y, x) looks at neighbor n = (y+dy, x+dx)
            py0, py1 = max(0, -dy), min(h, h - dy)
            px0, px1 = max(0, -dx), min(w, w - dx)
            p_sl = (slice(py0, py1), slice(px0, px1))
            n_sl = (slice(py0 + dy, py1 + dy), slice(px0 + dx, px1 + dx))
            nb_label = labels[n_sl]
            candidate = unlabeled[p_sl] & (nb_label != UNLABELED)
            if not candidate.any():
                continue
            diff = feats[(slice(None),) + p_sl] - feats[(slice(None),) + n_sl]
            dist = np.sqrt((diff * diff).sum(axis=0))
            ok = candidate & (dist < thr)
            cur_d = best_dist[p_sl]
            cur_l = best_label[p_sl]
            better = ok & ((dist < cur_d) | ((dist == cur_d) & (nb_label < cur_l)))
            cur_d[better] = dist[better]
            cur_l[better] = nb_label[better]
            best_dist[p_sl] = cur_d
            best_label[p_sl] = cur_l
        adopt = np.isfinite(best_dist)
        if not adopt.any():
            break
        labels[adopt] = best_label[adopt].astype(np.uint8)
    return LabelMask(labels)


def _bresenham(dy, dx):
    """Integer line cells from (0,0) to (dy,dx), endpoints included."""
    cells = []
    y, x = 0, 0
    sy = 1 if dy > 0 else -1
    sx = 1 if dx > 0 else -1
    ady, adx = abs(dy), abs(dx)
    err = adx - ady
    while True:
        cells.append((y, x))
        if y == dy and x == dx:
            break
        e2 = 2 * err
        if e2 > -ady:
            err -= ady
            x += sx
        if e2 < adx:
            err += adx
            y += sy
    return cells


def _segment_cells(dy, dx):
    """Rasterized segment from (0,0) to (dy,dx), symmetrized under reflection
    about the midpoint so affinity(p,q) == affinity(q,p)."""
    cells = set(_bresenham(dy, dx))
    cells |= {(dy - y, dx - x) for (y, x) in cells}
    return sorted(cells)


def _ball_offsets(radius, connectivity):
    """Non-zero offsets within the ball, with mirrored segments so affinities
    are symmetric."""
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            if connectivity is Connectivity.FOUR and abs(dy) + abs(dx) > radius:
                continue
            if connectivity is Connectivity.EIGHT and max(abs(dy), abs(dx)) > radius:
                continue
            if dy > 0 or (dy == 0 and dx > 0):
                cells = _segment_cells(dy, dx)
            else:
                cells = [(-y, -x) for (y, x) in _segment_cells(-dy, -dx)]
            out.append(((dy, dx), cells))
    return out


def build_transition(boundary: BoundaryMap, policy: WalkPolicy = WalkPolicy()):
    """Sparse row-stochastic transition matrix over pixels (row-major order).

    Affinity(p, q) = (1 - max boundary on segment pq) ** beta for neighbors
    within the radius ball; self-affinity 1; rows normalized to sum 1.
    """
    b = boundary.values
    h, w = b.shape
    n = h * w
    rows = [np.arange(n, dtype=np.int64)]
    cols = [np.arange(n, dtype=np.int64)]
    vals = [np.ones(n)]
    yy, xx = np.mgrid[0:h, 0:w]
    flat = yy * w + xx
    for (dy, dx), cells in _ball_offsets(policy.radius, policy.connectivity):
        py0, py1 = max(0, -dy), min(h, h - dy)
        px0, px1 = max(0, -dx), min(w, w - dx)
        if py0 >= py1 or px0 >= px1:
            continue
        seg_max = np.zeros((py1 - py0, px1 - px0))
        for ay, ax in cells:
            seg_max = np.maximum(seg_max, b[py0 + ay : py1 + ay, px0 + ax : px1 + ax])
        affinity = (1.0 - seg_max) ** policy.beta
        src = flat[py0:py1, px0:px1]
        dst = flat[py0 + dy : py1 + dy, px0 + dx : px1 + dx]
        keep = affinity > 0
        rows.append(src[keep])
        cols.append(dst[keep])
        vals.append(affinity[keep])
    mat = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    row_sums = np.asarray(mat.sum(axis=1)).ravel()
    inv = sparse.diags(1.0 / row_sums)
    return inv @ mat


def random_walk(stack: ActivationStack, transition, policy: WalkPolicy = WalkPolicy()) -> ActivationStack:
    """Propagate each class map by multiplying with the transition transpose
    policy.steps times. Per-class total mass is conserved; the optional
    renormalize flag rescales each map back to its pre-walk maximum."""
    n = stack.height * stack.width
    if transition.shape != (n, n):
        raise DimensionMismatchError(f"transition {transition.shape} vs {n} pixels")
    row_sums = np.asarray(transition.sum(axis=1)).ravel()
    if np.abs(row_sums - 1.0).max() > 1e-9:
        raise StochasticityViolationError(
            f"row sums deviate from 1 by {np.abs(row_sums - 1.0).max():.3e}"
        )
    tt = transition.T.tocsr()
    vecs = stack.maps.reshape(stack.num_classes, n).T.copy()  # n × C
    for _ in range(policy.steps):
        vecs = tt @ vecs
    out = vecs.T.reshape(stack.maps.shape)
    if policy.renormalize:
        pre = stack.maps.max(axis=(1, 2))
        post = out.max(axis=(1, 2))
        scale = np.where(post > 0, pre / np.maximum(post, 1e-300), 1.0)
        out = out * scale[:, None, None]
    return stack.with_maps(out)
