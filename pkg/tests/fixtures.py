"""Synthetic dataset builders shared by unit and acceptance tests."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from msvlad.manifest import ManifestEntry, Relevance, save_manifest
from msvlad.tensor_io import write_tensor


def make_retrieval_dataset(
    root,
    classes: int = 32,
    per_class: tuple[int, int, int] = (10, 4, 2),
    channels: int = 16,
    resolution_grids: dict[int, tuple[int, int]] | None = None,
    background_words: int = 8,
    background_prob: float = 0.5,
    class_scale: float = 0.25,
    cell_noise: float = 0.25,
    patch: int = 4,
    seed: int = 0,
) -> Path:
    """Write feature files plus a manifest; returns the manifest path.

    Maps are tiled into patch x patch regions; each region carries either
    the image's class prototype or one of a small set of background
    prototypes shared by every class, plus per-cell jitter. Regions keep
    the maps spatially coherent the way convolutional activations are, so
    stride-1 max windows mostly see one region. Background words span the
    feature space while all class prototypes sit in one small blob
    (class_scale), so an unsupervised codebook spends itself on the
    class-free background structure and barely resolves the classes;
    training has to redistribute it.

    per_class counts images per split (train, gallery, query). Every image
    gets one map per resolution, sharing its class prototype across
    resolutions.
    """
    if resolution_grids is None:
        resolution_grids = {336: (12, 12)}
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)

    prototypes = class_scale * rng.normal(size=(classes, channels))
    background = rng.normal(size=(background_words, channels))

    def image_base(h: int, w: int, cls: int) -> np.ndarray:
        rows, cols = -(-h // patch), -(-w // patch)
        is_bg = rng.random(size=(rows, cols)) < background_prob
        word = rng.integers(background_words, size=(rows, cols))
        patches = np.where(is_bg[..., None], background[word], prototypes[cls])
        grid = np.repeat(np.repeat(patches, patch, axis=0), patch, axis=1)
        return grid[:h, :w]
    entries = []
    gallery_by_class = defaultdict(list)
    query_ids = []

    for cls in range(classes):
        for split, count in zip(("train", "gallery", "query"), per_class):
            for i in range(count):
                image_id = f"{split}{cls:03d}_{i:02d}"
                for resolution, (h, w) in resolution_grids.items():
                    values = image_base(h, w, cls) + cell_noise * rng.normal(
                        size=(h, w, channels)
                    )
                    rel_path = f"features/{image_id}_{resolution}.msvf"
                    write_tensor(root / rel_path, values.shape, values.ravel())
                    entries.append(ManifestEntry(image_id, cls, split, resolution, rel_path))
                if split == "gallery":
                    gallery_by_class[cls].append(image_id)
                elif split == "query":
                    query_ids.append((image_id, cls))

    relevance = {
        qid: Relevance(frozenset(gallery_by_class[cls])) for qid, cls in query_ids
    }
    manifest_path = root / "manifest.jsonl"
    save_manifest(manifest_path, entries, relevance)
    return manifest_path


def gaussian_descriptor_pool(
    seed: int = 0,
    classes: int = 512,
    per_class: int = 4,
    dim: int = 16,
    prototype_scale: float = 0.04,
    spread_ratio: float = 1.3,
):
    """Overlapping Gaussian class clusters for mining tests.

    The prototype scale keeps all pairwise squared distances well under
    the triplet margin so consecutive-rank pairs never fall past it; the
    spread/prototype ratio controls how often classmates outrank the
    nearest negative (and with it the triplet yield).
    """
    rng = np.random.default_rng(seed)
    prototypes = prototype_scale * rng.normal(size=(classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    noise = prototype_scale * spread_ratio * rng.normal(size=(labels.size, dim))
    return prototypes[labels] + noise, labels
