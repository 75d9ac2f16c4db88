"""Inter-class activation adjustments: catch-all "other" map synthesis and
2D-max class subtraction.

Subtraction suppresses weak activations overlapping strong ones; negative
values are kept so the CRF unary builder sees relative evidence (clamping
happens there, not here).
"""

from __future__ import annotations

import numpy as np

from .core import ActivationStack
from .errors import DimensionMismatchError, SingleClassError, WssegError


def synthesize_other(functional_maps, adipose_maps=(), background_map=None, scale=0.05):
    """other = scale * (1 - pixelwise max over all provided maps).

    functional_maps: iterable of H×W arrays (or an ActivationStack).
    """
    if isinstance(functional_maps, ActivationStack):
        maps = [functional_maps.maps[i] for i in range(functional_maps.num_classes)]
    else:
        maps = [np.asarray(m, dtype=np.float64) for m in functional_maps]
    maps += [np.asarray(m, dtype=np.float64) for m in adipose_maps]
    if background_map is not None:
        maps.append(np.asarray(background_map, dtype=np.float64))
    if not maps:
        raise WssegError("synthesize_other needs at least one input map")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise DimensionMismatchError(f"map shape {m.shape} differs from {shape}")
    peak = maps[0].copy()
    for m in maps[1:]:
        np.maximum(peak, m, out=peak)
    return scale * (1.0 - peak)


def subtract_classes(stack: ActivationStack) -> ActivationStack:
    """Subtract from each class map the pixelwise max of the other maps.

    At most one class stays strictly positive per pixel afterwards; the
    per-pixel argmax is unchanged.
    """
    maps = stack.maps
    c = maps.shape[0]
    if c < 2:
        raise SingleClassError("class subtraction needs at least two maps")
    # max of others via top-2: for the argmax channel use the runner-up
    order = np.argsort(maps, axis=0)
    top_idx = order[-1]
    top_val = np.take_along_axis(maps, top_idx[None], axis=0)[0]
    second_val = np.take_along_axis(maps, order[-2][None], axis=0)[0]
    max_others = np.where(np.arange(c)[:, None, None] == top_idx[None], second_val[None], top_val[None])
    return stack.with_maps(maps - max_others)
