"""Command line for the exporter: cam-export --model m.npz --images a.png b.png --out dir"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ExporterError
from .export import CAM, GRAD_CAM, ExportJob, export


def _build_parser():
    p = argparse.ArgumentParser(prog="cam-export", description=__doc__)
    p.add_argument("--model", required=True, help="npz weights file")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[CAM, GRAD_CAM], default=GRAD_CAM)
    p.add_argument("--size", default="224x224", help="output resolution HxW")
    p.add_argument("--classes", nargs="*", default=(), help="target class subset")
    p.add_argument("--labels", help="JSON file mapping image id to known label names")
    p.add_argument("--label-threshold", type=float, default=0.5)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        print(f"cam-export: bad --size {args.size!r}, expected HxW", file=sys.stderr)
        return 1
    known = {}
    if args.labels:
        try:
            with open(args.labels, encoding="utf-8") as f:
                known = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            print(f"cam-export: cannot load labels: {e}", file=sys.stderr)
            return 2
    job = ExportJob(
        model_path=args.model,
        images=tuple(args.images),
        out_dir=args.out,
        cam_mode=args.mode,
        output_size=(h, w),
        target_classes=tuple(args.classes),
        label_threshold=args.label_threshold,
        known_labels=known,
    )
    try:
        manifest = export(job)
    except (ExporterError, ValueError, OSError) as e:
        print(f"cam-export: {e}", file=sys.stderr)
        return 2
    print(f"manifest written to {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
