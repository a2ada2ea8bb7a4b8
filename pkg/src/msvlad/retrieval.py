"""Descriptor database, exact nearest-neighbor ranking and mAP evaluation.

Gallery descriptors live in one immutable matrix of unit (or zero) rows;
queries rank the whole gallery by inner product, which for unit vectors
matches ascending Euclidean distance. Average precision follows the
discrete precision-at-positive-ranks convention with junk ids removed
from rankings before scoring.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    MissingFeatureError,
    MissingRelevanceError,
)
from .manifest import DatasetManifest
from .netvlad import Descriptor, VladParams, _l2_normalized, describe_image
from .pooling import PoolingMode
from .tensor_io import load_feature_map


@dataclass
class DescriptorIndex:
    ids: list
    matrix: np.ndarray

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise DomainError("index ids must be unique")
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(self.ids):
            raise DimensionError(
                f"matrix shape {mat.shape} does not match {len(self.ids)} ids"
            )
        self.matrix = mat

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class EvalReport:
    per_query: dict
    map_score: float
    query_count: int

    def to_json(self) -> str:
        return json.dumps(
            {"map": self.map_score, "per_query": self.per_query}, sort_keys=True
        )


def combine_multires(descriptors) -> Descriptor:
    """Sum descriptors from several resolutions and renormalize."""
    if not descriptors:
        raise DomainError("combine_multires needs at least one descriptor")
    first = descriptors[0].values
    for d in descriptors[1:]:
        if d.values.shape != first.shape:
            raise DimensionError(
                f"descriptor lengths differ: {d.values.shape[0]} vs {first.shape[0]}"
            )
    if len(descriptors) == 1:
        return Descriptor(first.copy())
    return Descriptor(_l2_normalized(np.sum([d.values for d in descriptors], axis=0)))


def _image_descriptor(manifest, image_id, split, params, mode, resolutions, power_norm):
    if resolutions is None:
        wanted = manifest.resolutions_for(image_id, split)
    else:
        wanted = list(resolutions)
    maps = []
    for resolution in wanted:
        entry = manifest.entry_for(image_id, resolution, split)
        if entry is None:
            raise MissingFeatureError(
                f"image '{image_id}' has no {split} feature at resolution {resolution}"
            )
        maps.append(load_feature_map(manifest.resolve(entry)))
    if not maps:
        raise MissingFeatureError(f"image '{image_id}' has no {split} features")
    return describe_image(maps, mode, params, power_norm).values


def build_index(
    manifest: DatasetManifest,
    params: VladParams,
    mode: PoolingMode,
    resolutions=None,
    power_norm: bool = False,
    threads: int = 1,
) -> DescriptorIndex:
    """One combined descriptor per gallery image, rows aligned to ids."""
    ids = manifest.ids("gallery")

    def one(image_id):
        return _image_descriptor(
            manifest, image_id, "gallery", params, mode, resolutions, power_norm
        )

    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, ids))
    else:
        rows = [one(i) for i in ids]
    matrix = np.stack(rows) if rows else np.zeros((0, params.k * params.dim))
    return DescriptorIndex(ids, matrix)


def query_index(index: DescriptorIndex, query: Descriptor, top_k: int | None = None):
    """Rank gallery ids by descending similarity; ties break by id."""
    q = query.values
    if q.shape[0] != index.dim:
        raise DimensionError(f"query dim {q.shape[0]} != index dim {index.dim}")
    sims = index.matrix @ q
    order = sorted(range(len(index.ids)), key=lambda i: (-sims[i], index.ids[i]))
    if top_k is not None:
        order = order[:top_k]
    return [(index.ids[i], float(sims[i])) for i in order]


def average_precision(ranked_ids, positives, junk=frozenset()) -> float:
    """AP over a ranking; junk ids are dropped before computing ranks.

    Positives missing from the ranking contribute zero precision, so the
    mean is always taken over the full positive set.
    """
    positives = set(positives)
    junk = set(junk)
    if not positives:
        raise DomainError("average_precision needs a non-empty positive set")
    if positives & junk:
        raise DomainError("positives and junk sets overlap")
    hits = 0
    total = 0.0
    rank = 0
    for image_id in ranked_ids:
        if image_id in junk:
            continue
        rank += 1
        if image_id in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def evaluate(
    manifest: DatasetManifest,
    index: DescriptorIndex,
    params: VladParams,
    mode: PoolingMode,
    resolutions=None,
    power_norm: bool = False,
    threads: int = 1,
) -> EvalReport:
    """mAP over the manifest's query split against a gallery index."""
    query_ids = manifest.ids("query")
    if not query_ids:
        raise DomainError("manifest has no query entries to evaluate")
    for query_id in query_ids:
        if query_id not in manifest.relevance:
            raise MissingRelevanceError(f"query '{query_id}' has no relevance entry")

    def one(query_id):
        values = _image_descriptor(
            manifest, query_id, "query", params, mode, resolutions, power_norm
        )
        ranked = query_index(index, Descriptor(values))
        rel = manifest.relevance[query_id]
        return average_precision([i for i, _ in ranked], rel.positives, rel.junk)

    if threads > 1 and len(query_ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            aps = list(pool.map(one, query_ids))
    else:
        aps = [one(q) for q in query_ids]
    per_query = {q: float(ap) for q, ap in zip(query_ids, aps)}
    return EvalReport(per_query, float(np.mean(aps)), len(query_ids))
