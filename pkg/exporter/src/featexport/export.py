"""Batch export of backbone activation grids in the retrieval pipeline's
file formats.

Images are listed in a JSON-lines file, one object per image:

    {"path": "imgs/cat.jpg", "id": "cat", "label": 3, "split": "gallery"}

Every image is resized (squashed, aspect ratio ignored) to each requested
resolution, run through the backbone, and written as one tensor file per
resolution, alongside a manifest the pipeline loads directly. Undecodable
images are skipped with a warning and surface in the result's skip list.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from msvlad.manifest import ManifestEntry, save_manifest
from msvlad.tensor_io import write_tensor

from .backbone import Vgg16Backbone

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTIONS = (224, 336, 504)


@dataclass(frozen=True)
class ImageSpec:
    path: str
    image_id: str
    label: int
    split: str


@dataclass(frozen=True)
class ExportConfig:
    images: tuple
    out_dir: str
    resolutions: tuple = DEFAULT_RESOLUTIONS
    tap: str = "block5_conv2"
    weights: str = "pretrained"
    seed: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.resolutions):
            raise ValueError(f"resolutions must be positive, got {self.resolutions}")


@dataclass
class ExportResult:
    manifest: Path
    written: int
    skipped: list = field(default_factory=list)


def load_image_list(path) -> tuple:
    """Read the JSON-lines image list."""
    specs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            obj = json.loads(line)
            missing = [k for k in ("path", "id", "label", "split") if k not in obj]
            if missing:
                raise ValueError(f"line {lineno}: image entry is missing {missing}")
            specs.append(ImageSpec(obj["path"], obj["id"], int(obj["label"]), obj["split"]))
    return tuple(specs)


def _load_rgb(path, resolution: int) -> np.ndarray:
    with Image.open(path) as img:
        squashed = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(squashed, dtype=np.float32) / 255.0


def export(config: ExportConfig, backbone: Vgg16Backbone | None = None) -> ExportResult:
    """Run the backbone over every image x resolution and emit the files."""
    if backbone is None:
        backbone = Vgg16Backbone(config.tap, config.weights, config.seed)
    out_dir = Path(config.out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    entries = []
    skipped = []
    written = 0
    for spec in config.images:
        try:
            grids = [
                backbone.features(_load_rgb(spec.path, resolution))
                for resolution in config.resolutions
            ]
        except (OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", spec.path, exc)
            skipped.append({"path": spec.path, "reason": str(exc)})
            continue
        for resolution, grid in zip(config.resolutions, grids):
            rel_path = f"features/{spec.image_id}_{resolution}.msvf"
            write_tensor(out_dir / rel_path, grid.shape, grid.reshape(-1))
            entries.append(
                ManifestEntry(spec.image_id, spec.label, spec.split, resolution, rel_path)
            )
            written += 1

    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(manifest_path, entries)
    meta = {
        "preprocessing": "RGB in [0,1], ImageNet mean/std",
        "resolutions": list(config.resolutions),
        "seed": config.seed,
        "tap": backbone.tap,
        "weights": backbone.weights,
    }
    with open(out_dir / "export_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return ExportResult(manifest_path, written, skipped)
