"""Filter-bank linear-head image classifier loaded from an .npz weights file.

The model is deliberately framework-free: features are a strided correlation
of the RGB image with a fixed filter bank, vectorized by global average or
max pooling into a linear sigmoid head. That is enough structure for exact
CAM and Grad-CAM math without autodiff.

npz contents:
    filters      (F, 3, k, k) float   conv filter bank
    head_weights (C, F) float         class weights
    head_bias    (C,) float
    pooling      str                  "gap" or "gmp"
    stride       int
    class_names  (C,) str
    class_colors (C, 3) uint8         palette for the taxonomy file
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ModelLoadFailure


@dataclass(frozen=True)
class FilterBankModel:
    filters: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray
    pooling: str
    stride: int
    class_names: tuple
    class_colors: tuple

    @property
    def num_classes(self):
        return self.head_weights.shape[0]

    def features(self, image):
        """C-correlate the image with the bank. image: H×W×3 in [0, 1].
        Returns (F, h, w) with 'same' zero padding and the model stride."""
        f, _, k, _ = self.filters.shape
        pad = k // 2
        padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
        windows = windows[:: self.stride, :: self.stride]  # (h, w, 3, k, k)
        feats = np.tensordot(windows, self.filters, axes=[[2, 3, 4], [1, 2, 3]])
        return np.moveaxis(feats, 2, 0)  # (F, h, w)

    def logits(self, feats):
        if self.pooling == "gap":
            pooled = feats.mean(axis=(1, 2))
        else:
            pooled = feats.max(axis=(1, 2))
        return self.head_weights @ pooled + self.head_bias

    def scores(self, feats):
        return 1.0 / (1.0 + np.exp(-self.logits(feats)))

    def cam(self, feats):
        """Class activation maps: per-class weighted sum of feature maps."""
        return np.tensordot(self.head_weights, feats, axes=[[1], [0]])

    def grad_cam(self, feats):
        """Grad-CAM: ReLU of feature maps weighted by spatially pooled
        analytic head gradients.

        For this head the gradient of logit c w.r.t. feature map k is
        W[c,k]/P everywhere under GAP, and W[c,k] concentrated at the max
        position under GMP; pooled over positions both give alpha = W/P, so
        Grad-CAM here is ReLU(CAM)/P.
        """
        p = feats.shape[1] * feats.shape[2]
        if self.pooling == "gap":
            alpha = self.head_weights / p
        else:
            alpha = self.head_weights / p  # GMP: single-position gradient, same pooled value
        return np.maximum(np.tensordot(alpha, feats, axes=[[1], [0]]), 0.0)


def load_model(path) -> FilterBankModel:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ModelLoadFailure(f"cannot load model {path}: {e}") from e
    try:
        filters = np.asarray(data["filters"], dtype=np.float64)
        weights = np.asarray(data["head_weights"], dtype=np.float64)
        bias = np.asarray(data["head_bias"], dtype=np.float64)
        pooling = str(data["pooling"])
        stride = int(data["stride"])
        names = tuple(str(n) for n in data["class_names"])
        colors = tuple(tuple(int(v) for v in c) for c in data["class_colors"])
    except KeyError as e:
        raise ModelLoadFailure(f"model {path} is missing array {e}") from e
    if filters.ndim != 4 or filters.shape[1] != 3:
        raise ModelLoadFailure(f"filters must be (F, 3, k, k), got {filters.shape}")
    if weights.shape != (len(names), filters.shape[0]):
        raise ModelLoadFailure(
            f"head_weights {weights.shape} does not match {len(names)} classes x {filters.shape[0]} filters"
        )
    if pooling not in ("gap", "gmp"):
        raise ModelLoadFailure(f"pooling must be 'gap' or 'gmp', got {pooling!r}")
    if stride < 1:
        raise ModelLoadFailure("stride must be at least 1")
    if len(colors) != len(names):
        raise ModelLoadFailure("class_colors must pair with class_names")
    return FilterBankModel(filters, weights, bias, pooling, stride, names, colors)


def save_model(path, filters, head_weights, head_bias, pooling, stride, class_names, class_colors):
    np.savez(
        path,
        filters=np.asarray(filters, dtype=np.float32),
        head_weights=np.asarray(head_weights, dtype=np.float32),
        head_bias=np.asarray(head_bias, dtype=np.float32),
        pooling=pooling,
        stride=stride,
        class_names=np.asarray(class_names),
        class_colors=np.asarray(class_colors, dtype=np.uint8),
    )


def make_color_prototype_model(path, class_colors, class_names, kernel=5, stride=4):
    """Small deterministic classifier: one averaging filter per RGB channel,
    head weights tuned to fire on pixels near each class's prototype color."""
    colors = np.asarray(class_colors, dtype=np.float64) / 255.0
    c = len(colors)
    # filters: channel averages plus a constant-intensity filter
    filters = np.zeros((4, 3, kernel, kernel))
    for ch in range(3):
        filters[ch, ch] = 1.0 / (kernel * kernel)
    filters[3, :, :, :] = 1.0 / (3 * kernel * kernel)
    # similarity to prototype color v: 2 v . x - |v|^2 (monotone in -|x - v|^2)
    weights = np.zeros((c, 4))
    weights[:, :3] = 2.0 * colors
    bias = -(colors ** 2).sum(axis=1)
    save_model(path, filters, weights, bias, "gap", stride, class_names, class_colors)
    return path
