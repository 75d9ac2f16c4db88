"""Fully-connected CRF mean-field refinement with Potts compatibility.

Pairwise energy between pixels p, q:
    w1 * exp(-|p-q|^2 / 2*sa^2 - |I_p-I_q|^2 / 2*sc^2)  (appearance)
  + w2 * exp(-|p-q|^2 / 2*ss^2)                         (smoothness)

EXACT mode sums over all pixel pairs and is the correctness oracle for
APPROX mode, which filters with color-stratified truncated separable
Gaussians: exact per-distinct-color strata while the image palette is small,
channel-quantized strata beyond that.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .core import ActivationStack, LabelMask, ProbabilityField
from .errors import DimensionMismatchError, SingleClassError, WssegError


class CrfMode(Enum):
    EXACT = "exact"
    APPROX = "approx"


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 5
    appearance_weight: float = 4.0
    appearance_spatial_sigma: float = 61.0
    appearance_color_sigma: float = 11.0
    smoothness_weight: float = 3.0
    smoothness_sigma: float = 3.0
    mode: CrfMode = CrfMode.APPROX
    max_colors: int = 512
    color_bins: int = 32

    def __post_init__(self):
        if self.iterations < 1:
            raise WssegError("iterations must be at least 1")
        for s in (self.appearance_spatial_sigma, self.appearance_color_sigma, self.smoothness_sigma):
            if s <= 0:
                raise WssegError("kernel sigmas must be positive")
        if self.appearance_weight < 0 or self.smoothness_weight < 0:
            raise WssegError("kernel weights must be non-negative")


# paper presets are unpublished; these ship as tunable stand-ins
PRESETS = {
    "morph": CrfParams(iterations=5, appearance_weight=4.0, appearance_spatial_sigma=61.0,
                       appearance_color_sigma=11.0, smoothness_weight=3.0, smoothness_sigma=3.0),
    "func": CrfParams(iterations=5, appearance_weight=3.0, appearance_spatial_sigma=41.0,
                      appearance_color_sigma=13.0, smoothness_weight=3.0, smoothness_sigma=3.0),
}


def build_unary(stack: ActivationStack, epsilon: float = 1e-3) -> ProbabilityField:
    """Clamp activations below epsilon, normalize across classes to sum 1."""
    if stack.num_classes < 2:
        raise SingleClassError("unary needs at least two class maps")
    clamped = np.maximum(stack.maps, epsilon)
    return ProbabilityField(clamped / clamped.sum(axis=0, keepdims=True))


def _gauss1d_kernel(sigma, max_radius):
    r = min(int(np.ceil(6.0 * sigma)), max_radius)
    x = np.arange(-r, r + 1, dtype=np.float64)
    return np.exp(-(x * x) / (2.0 * sigma * sigma))


def _gauss2d(arr, sigma, h, w):
    """Unnormalized truncated Gaussian correlation; out-of-image treated as zero."""
    ky = _gauss1d_kernel(sigma, h - 1)
    kx = _gauss1d_kernel(sigma, w - 1)
    out = ndimage.correlate1d(arr, ky, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, kx, axis=1, mode="constant", cval=0.0)


def _color_strata(rgb, params):
    """List of (mask H×W bool, weight H×W) pairs: weight_p = exp(-|I_p - v|^2 / 2*sc^2)."""
    h, w, _ = rgb.shape
    flat = rgb.reshape(-1, 3)
    uniq = np.unique(flat, axis=0)
    if len(uniq) > params.max_colors:
        step = 256.0 / params.color_bins
        quant = (np.floor(flat / step) + 0.5) * step
        uniq = np.unique(quant, axis=0)
        assign = quant
    else:
        assign = flat
    two_sc2 = 2.0 * params.appearance_color_sigma ** 2
    strata = []
    for v in uniq:
        mask = np.all(assign == v, axis=1).reshape(h, w)
        d2 = ((rgb - v[None, None, :]) ** 2).sum(axis=2)
        strata.append((mask, np.exp(-d2 / two_sc2)))
    return strata


def _messages_exact(q, rgb, params):
    c, h, w = q.shape
    n = h * w
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    ds = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    col = rgb.reshape(n, 3)
    dc = ((col[:, None, :] - col[None, :, :]) ** 2).sum(axis=2)
    kernel = params.appearance_weight * np.exp(
        -ds / (2 * params.appearance_spatial_sigma ** 2)
        - dc / (2 * params.appearance_color_sigma ** 2)
    ) + params.smoothness_weight * np.exp(-ds / (2 * params.smoothness_sigma ** 2))
    np.fill_diagonal(kernel, 0.0)
    return (kernel @ q.reshape(c, n).T).T.reshape(c, h, w)


def _messages_approx(q, strata, params, h, w):
    c = q.shape[0]
    out = np.zeros_like(q)
    sa = params.appearance_spatial_sigma
    ss = params.smoothness_sigma
    for ci in range(c):
        qc = q[ci]
        if params.appearance_weight > 0:
            app = np.zeros((h, w))
            for mask, weight in strata:
                app += weight * _gauss2d(qc * mask, sa, h, w)
            app -= qc  # remove the q = p term
            out[ci] += params.appearance_weight * app
        if params.smoothness_weight > 0:
            out[ci] += params.smoothness_weight * (_gauss2d(qc, ss, h, w) - qc)
    return out


def mean_field_iterates(unary: ProbabilityField, rgb, params: CrfParams):
    """Run mean-field updates, returning the field after every iteration."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape != (unary.height, unary.width, 3):
        raise DimensionMismatchError(
            f"rgb shape {rgb.shape} vs field {(unary.height, unary.width, 3)}"
        )
    u = -np.log(unary.probs)
    q = unary.probs.copy()
    h, w = unary.height, unary.width
    strata = None
    if params.mode is CrfMode.APPROX and params.appearance_weight > 0:
        strata = _color_strata(rgb, params)
    states = []
    for _ in range(params.iterations):
        if params.appearance_weight == 0 and params.smoothness_weight == 0:
            # no pairwise term: the update is softmax(-U) = the unary itself,
            # exactly, so skip the lossy exp(-log(.)) round trip
            states.append(ProbabilityField(q))
            continue
        if params.mode is CrfMode.EXACT:
            msg = _messages_exact(q, rgb, params)
        else:
            msg = _messages_approx(q, strata, params, h, w)
        # Potts compatibility: each class is penalized by the other classes' messages
        energy = u + (msg.sum(axis=0, keepdims=True) - msg)
        energy -= energy.min(axis=0, keepdims=True)
        expe = np.exp(-energy)
        q = expe / expe.sum(axis=0, keepdims=True)
        states.append(ProbabilityField(q))
    return states


def mean_field(unary: ProbabilityField, rgb, params: CrfParams) -> ProbabilityField:
    return mean_field_iterates(unary, rgb, params)[-1]


def argmax_labels(field: ProbabilityField) -> LabelMask:
    """Most confident class at each pixel; ties go to the lower class index."""
    return LabelMask(np.argmax(field.probs, axis=0).astype(np.uint8))
