"""On-disk formats: WSAS activation stacks, paletted mask PNGs, taxonomy and manifest JSON.

Stack layout (all little-endian):
    magic "WSAS" | version u32=1 | C u32 | H u32 | W u32 | confidences C×f32 | payload C·H·W×f32
Payload is row-major with class as the slowest axis.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import UNLABELED, MAX_DIM, ActivationStack, BackgroundMode, ClassTaxonomy, LabelMask
from .errors import (
    BadMagicError,
    DimensionOverflowError,
    IdRequiredError,
    IoFailureError,
    TruncatedTensorError,
    UnknownColorError,
    WssegError,
)

MAGIC = b"WSAS"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def _atomic_write(path, data: bytes):
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}") from e


def write_stack(stack: ActivationStack, path) -> None:
    """Serialize a stack to a WSAS file (write-temp-then-rename)."""
    if not stack.image_id:
        raise IdRequiredError("stack image_id is empty; manifest keys must be non-empty")
    c, h, w = stack.maps.shape
    for dim in (c, h, w):
        if dim == 0 or dim > MAX_DIM:
            raise DimensionOverflowError(f"dimension {dim} outside 1..{MAX_DIM}")
    header = _HEADER.pack(MAGIC, VERSION, c, h, w)
    conf = stack.confidences.astype("<f4").tobytes()
    payload = stack.maps.astype("<f4").tobytes()
    _atomic_write(path, header + conf + payload)


def read_stack(path, image_id=None) -> ActivationStack:
    """Read a WSAS file. image_id defaults to the file stem."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise BadMagicError(f"{path}: too short for a WSAS header")
    magic, version, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    for dim in (c, h, w):
        if dim == 0 or dim > MAX_DIM:
            raise DimensionOverflowError(f"{path}: dimension {dim} outside 1..{MAX_DIM}")
    expected = _HEADER.size + 4 * c + 4 * c * h * w
    if len(raw) != expected:
        raise TruncatedTensorError(
            f"{path}: file holds {len(raw)} bytes, header implies {expected}"
        )
    conf = np.frombuffer(raw, dtype="<f4", count=c, offset=_HEADER.size)
    maps = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=_HEADER.size + 4 * c)
    return ActivationStack(maps.reshape(c, h, w), conf, image_id or path.stem)


def mask_to_png(mask: LabelMask, taxonomy: ClassTaxonomy, path) -> None:
    """Write an 8-bit paletted PNG; palette = taxonomy colors in order, 255 = (0,0,0)."""
    labels = mask.labels
    used = np.unique(labels)
    bad = used[(used != UNLABELED) & (used >= len(taxonomy))]
    if bad.size:
        raise WssegError(f"mask uses label {int(bad[0])} outside taxonomy of {len(taxonomy)} classes")
    palette = [0] * (256 * 3)
    for i, (r, g, b) in enumerate(taxonomy.colors):
        palette[3 * i : 3 * i + 3] = [r, g, b]
    img = Image.fromarray(labels, mode="P")
    img.putpalette(palette)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write(path, buf.getvalue())


def png_to_mask(path, taxonomy: ClassTaxonomy) -> LabelMask:
    """Invert mask_to_png exactly, validating used palette entries against the taxonomy."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e
    if img.mode != "P":
        raise UnknownColorError(f"{path}: not a paletted image (mode {img.mode})")
    labels = np.asarray(img, dtype=np.uint8)
    palette = img.getpalette() or []
    palette = palette + [0] * (768 - len(palette))
    for idx in np.unique(labels):
        if idx == UNLABELED:
            continue
        color = tuple(palette[3 * idx : 3 * idx + 3])
        if idx >= len(taxonomy) or taxonomy.colors[idx] != color:
            raise UnknownColorError(
                f"{path}: palette entry {int(idx)} with color {color} matches no taxonomy class"
            )
    return LabelMask(labels)


def write_taxonomy(taxonomy: ClassTaxonomy, path) -> None:
    doc = {
        "classes": [{"name": n, "color": list(c)} for n, c in taxonomy.classes],
        "background_mode": taxonomy.background_mode.value,
    }
    _atomic_write(path, json.dumps(doc, indent=2).encode("utf-8"))


def read_taxonomy(path) -> ClassTaxonomy:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise WssegError(f"{path}: invalid taxonomy JSON: {e}") from e
    try:
        classes = tuple((c["name"], tuple(c["color"])) for c in doc["classes"])
        mode = BackgroundMode(doc.get("background_mode", "none"))
    except (KeyError, TypeError, ValueError) as e:
        raise WssegError(f"{path}: malformed taxonomy: {e}") from e
    return ClassTaxonomy(classes, mode)


@dataclass(frozen=True)
class ManifestImage:
    """One manifest entry. Paths are relative to the manifest location."""

    id: str
    stack: str
    labels: tuple
    gt_mask: str = None
    rgb: str = None
    boundary: str = None
    bg_stack: str = None
    transparent_stack: str = None

    def __post_init__(self):
        if not self.id:
            raise IdRequiredError("manifest image id must be non-empty")
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class Manifest:
    images: tuple
    taxonomy: str
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "root", Path(self.root))
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise WssegError("manifest image ids must be unique")

    def resolve(self, rel):
        return self.root / rel

    def load_taxonomy(self) -> ClassTaxonomy:
        return read_taxonomy(self.resolve(self.taxonomy))


_OPTIONAL_IMAGE_KEYS = ("gt_mask", "rgb", "boundary", "bg_stack", "transparent_stack")


def write_manifest(manifest: Manifest, path) -> None:
    images = []
    for im in manifest.images:
        entry = {"id": im.id, "stack": im.stack, "labels": list(im.labels)}
        for key in _OPTIONAL_IMAGE_KEYS:
            val = getattr(im, key)
            if val is not None:
                entry[key] = val
        images.append(entry)
    doc = {"images": images, "taxonomy": manifest.taxonomy}
    _atomic_write(path, json.dumps(doc, indent=2).encode("utf-8"))


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise WssegError(f"{path}: invalid manifest JSON: {e}") from e
    try:
        images = tuple(
            ManifestImage(
                id=e["id"],
                stack=e["stack"],
                labels=tuple(e.get("labels", ())),
                **{k: e.get(k) for k in _OPTIONAL_IMAGE_KEYS},
            )
            for e in doc["images"]
        )
        taxonomy = doc["taxonomy"]
    except (KeyError, TypeError) as e:
        raise WssegError(f"{path}: malformed manifest: {e}") from e
    return Manifest(images, taxonomy, root=path.parent)


def read_boundary(path):
    """Boundary maps travel as single-class WSAS stacks."""
    from .core import BoundaryMap

    stack = read_stack(path)
    if stack.num_classes != 1:
        raise WssegError(f"{path}: boundary stack must hold exactly one map, got {stack.num_classes}")
    return BoundaryMap(np.clip(stack.maps[0], 0.0, 1.0))
