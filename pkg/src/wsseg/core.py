"""Domain types shared by every module.

All types are immutable after construction: arrays are copied in and marked
read-only, so instances can be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatchError, NonFiniteInputError, WssegError

# Reserved label value for unseeded / void pixels. Caps taxonomies at 255 classes.
UNLABELED = 255

MAX_DIM = 65535


class BackgroundMode(Enum):
    NONE = "none"
    BACKGROUND = "background"
    BACKGROUND_AND_OTHER = "background_and_other"


def _frozen_array(a, dtype):
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class list with display colors and background handling mode.

    classes: sequence of (name, (r, g, b)) pairs, colors in 0..255.
    """

    classes: tuple
    background_mode: BackgroundMode = BackgroundMode.NONE

    def __post_init__(self):
        canon = tuple((str(n), (int(c[0]), int(c[1]), int(c[2]))) for n, c in self.classes)
        object.__setattr__(self, "classes", canon)
        if len(canon) == 0:
            raise WssegError("taxonomy needs at least one class")
        if len(canon) > UNLABELED:
            raise WssegError(f"taxonomy limited to {UNLABELED} classes, got {len(canon)}")
        names = [n for n, _ in canon]
        if len(set(names)) != len(names):
            raise WssegError("class names must be unique")
        colors = [c for _, c in canon]
        if len(set(colors)) != len(colors):
            raise WssegError("class colors must be unique for a lossless palette round-trip")
        for c in colors:
            if not all(0 <= v <= 255 for v in c):
                raise WssegError(f"color {c} outside 0..255")
        if self.background_mode in (BackgroundMode.BACKGROUND, BackgroundMode.BACKGROUND_AND_OTHER):
            if names.count("background") != 1:
                raise WssegError("background mode requires exactly one class named 'background'")
        if self.background_mode is BackgroundMode.BACKGROUND_AND_OTHER:
            if names.count("other") != 1:
                raise WssegError("background_and_other mode requires exactly one class named 'other'")

    @property
    def names(self):
        return tuple(n for n, _ in self.classes)

    @property
    def colors(self):
        return tuple(c for _, c in self.classes)

    def __len__(self):
        return len(self.classes)

    def index_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise WssegError(f"class {name!r} not in taxonomy") from None

    @property
    def background_index(self):
        if self.background_mode is BackgroundMode.NONE:
            return None
        return self.index_of("background")

    @property
    def other_index(self):
        if self.background_mode is not BackgroundMode.BACKGROUND_AND_OTHER:
            return None
        return self.index_of("other")

    @property
    def foreground_indices(self):
        reserved = {self.background_index, self.other_index} - {None}
        return tuple(i for i in range(len(self.classes)) if i not in reserved)


@dataclass(frozen=True)
class ActivationStack:
    """Per-image C×H×W class activation maps plus per-class confidences."""

    maps: np.ndarray
    confidences: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        maps = _frozen_array(self.maps, np.float64)
        conf = _frozen_array(self.confidences, np.float64)
        if maps.ndim != 3:
            raise DimensionMismatchError(f"maps must be C×H×W, got shape {maps.shape}")
        if conf.shape != (maps.shape[0],):
            raise DimensionMismatchError(
                f"confidences shape {conf.shape} does not match {maps.shape[0]} maps"
            )
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "confidences", conf)

    @property
    def num_classes(self):
        return self.maps.shape[0]

    @property
    def height(self):
        return self.maps.shape[1]

    @property
    def width(self):
        return self.maps.shape[2]

    def with_maps(self, maps, confidences=None):
        conf = self.confidences if confidences is None else confidences
        return ActivationStack(maps, conf, self.image_id)

    def appended(self, extra_map, confidence=1.0):
        """New stack with one synthesized map appended (never overwrites)."""
        extra = np.asarray(extra_map, dtype=np.float64)
        if extra.shape != self.maps.shape[1:]:
            raise DimensionMismatchError(
                f"appended map shape {extra.shape} does not match {self.maps.shape[1:]}"
            )
        maps = np.concatenate([self.maps, extra[None]], axis=0)
        conf = np.concatenate([self.confidences, [float(confidence)]])
        return ActivationStack(maps, conf, self.image_id)


@dataclass(frozen=True)
class LabelMask:
    """H×W per-pixel class indices; 255 is the UNLABELED sentinel."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"labels must be H×W, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise WssegError("label values must fit in 0..255")
            arr = arr.astype(np.uint8)
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass(frozen=True)
class ProbabilityField:
    """C×H×W per-pixel class distribution; sums to 1 at every pixel."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.probs, np.float64)
        if p.ndim != 3:
            raise DimensionMismatchError(f"probs must be C×H×W, got shape {p.shape}")
        if p.size and p.min() < 0:
            raise WssegError("probabilities must be non-negative")
        sums = p.sum(axis=0)
        if p.size and (np.abs(sums - 1.0) > 1e-6).any():
            raise WssegError("per-pixel probabilities must sum to 1 within 1e-6")
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self):
        return self.probs.shape[0]

    @property
    def height(self):
        return self.probs.shape[1]

    @property
    def width(self):
        return self.probs.shape[2]


@dataclass(frozen=True)
class BoundaryMap:
    """H×W class-boundary likelihood in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen_array(self.values, np.float64)
        if v.ndim != 2:
            raise DimensionMismatchError(f"boundary must be H×W, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise WssegError("boundary values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def normalize_stack(stack: ActivationStack) -> ActivationStack:
    """Min-max scale each class map to [0, 1], then weight by its confidence.

    Constant maps carry no localization evidence and become all-zero.
    """
    maps = stack.maps
    if not np.isfinite(maps).all():
        raise NonFiniteInputError("activation maps contain non-finite values")
    lo = maps.min(axis=(1, 2), keepdims=True)
    hi = maps.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = (span == 0)
    safe_span = np.where(flat, 1.0, span)
    scaled = (maps - lo) / safe_span
    scaled = np.where(flat, 0.0, scaled)
    scaled = scaled * stack.confidences[:, None, None]
    return stack.with_maps(scaled)
