"""Writers for the WSAS stack / taxonomy / manifest formats.

Implemented from the format definitions alone so the exporter has no
dependency on the consuming toolkit:
    stack: magic "WSAS" | version u32=1 | C u32 | H u32 | W u32
           | confidences C*f32 | payload C*H*W*f32, little-endian,
           payload row-major with class slowest.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"WSAS"
VERSION = 1
MAX_DIM = 65535


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_stack(maps, confidences, path):
    """maps: (C, H, W) array; confidences: (C,) array."""
    maps = np.asarray(maps)
    confidences = np.asarray(confidences)
    c, h, w = maps.shape
    for dim in (c, h, w):
        if dim == 0 or dim > MAX_DIM:
            raise ValueError(f"dimension {dim} outside 1..{MAX_DIM}")
    header = struct.pack("<4sIIII", MAGIC, VERSION, c, h, w)
    _atomic_write(path, header + confidences.astype("<f4").tobytes() + maps.astype("<f4").tobytes())


def write_taxonomy(class_names, class_colors, path, background_mode="none"):
    doc = {
        "classes": [
            {"name": n, "color": [int(v) for v in c]}
            for n, c in zip(class_names, class_colors)
        ],
        "background_mode": background_mode,
    }
    _atomic_write(path, json.dumps(doc, indent=2).encode("utf-8"))


def write_manifest(entries, taxonomy_rel, path):
    """entries: list of dicts with at least id/stack/labels keys."""
    _atomic_write(
        path,
        json.dumps({"images": entries, "taxonomy": taxonomy_rel}, indent=2).encode("utf-8"),
    )
