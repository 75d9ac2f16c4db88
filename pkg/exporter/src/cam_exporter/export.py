"""Export CAM / Grad-CAM activation stacks from a classifier over a list of images."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageDecodeFailure
from .model import FilterBankModel, load_model
from .wsas import write_manifest, write_stack, write_taxonomy

CAM = "cam"
GRAD_CAM = "grad_cam"


@dataclass(frozen=True)
class ExportJob:
    model_path: str
    images: tuple
    out_dir: str
    cam_mode: str = GRAD_CAM
    output_size: tuple = (224, 224)  # (height, width)
    target_classes: tuple = ()  # default: every model class
    label_threshold: float = 0.5
    known_labels: dict = field(default_factory=dict)  # image id -> label names

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(str(p) for p in self.images))
        object.__setattr__(self, "target_classes", tuple(self.target_classes))
        if self.cam_mode not in (CAM, GRAD_CAM):
            raise ValueError(f"cam_mode must be {CAM!r} or {GRAD_CAM!r}")
        h, w = self.output_size
        if h < 1 or w < 1:
            raise ValueError("output_size must be positive")


def _load_image(path):
    try:
        img = Image.open(path).convert("RGB")
    except OSError as e:
        raise ImageDecodeFailure(f"cannot decode {path}: {e}") from e
    return np.asarray(img, dtype=np.float64) / 255.0


def _resize_map(map2d, height, width):
    img = Image.fromarray(map2d.astype(np.float32), mode="F")
    return np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float64)


def _min_max(map2d):
    lo, hi = map2d.min(), map2d.max()
    if hi > lo:
        return (map2d - lo) / (hi - lo)
    return np.zeros_like(map2d)


def export(job: ExportJob):
    """Run the classifier over every image and write WSAS stacks, a taxonomy,
    and a manifest into job.out_dir. Returns the manifest path."""
    model = load_model(job.model_path)
    targets = job.target_classes or model.class_names
    missing = [t for t in targets if t not in model.class_names]
    if missing:
        raise ValueError(f"target classes {missing} not in model classes {model.class_names}")
    target_idx = [model.class_names.index(t) for t in targets]
    colors = [model.class_colors[i] for i in target_idx]

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_taxonomy(targets, colors, out_dir / "taxonomy.json")

    h_out, w_out = job.output_size
    entries = []
    for image_path in job.images:
        image_id = Path(image_path).stem
        rgb01 = _load_image(image_path)
        feats = model.features(rgb01)
        scores = model.scores(feats)[target_idx]
        raw = model.cam(feats) if job.cam_mode == CAM else model.grad_cam(feats)
        raw = raw[target_idx]
        maps = np.stack([_min_max(_resize_map(m, h_out, w_out)) for m in raw])
        stack_name = f"{image_id}.wsas"
        write_stack(maps, scores, out_dir / stack_name)
        if image_id in job.known_labels:
            labels = list(job.known_labels[image_id])
        else:
            labels = [t for t, s in zip(targets, scores) if s >= job.label_threshold]
        entries.append({"id": image_id, "stack": stack_name, "labels": labels})
    manifest_path = out_dir / "manifest.json"
    write_manifest(entries, "taxonomy.json", manifest_path)
    return manifest_path
