"""Difficulty-aware triplet mining over a sampled image pool.

For every query, its neighbors are ranked by squared Euclidean distance
and walked in order. If the first wrong-label neighbor is not the nearest
neighbor, with a configurable probability the triplet (query, neighbor
just before it, that neighbor) is emitted; otherwise the walk continues to
the first same-label neighbor past it, and the triplet is emitted only if
the rank gap stays under a threshold. Candidates whose positive ranks too
far past the negative are dropped as hopeless: forcing them would push the
model toward pairs with essentially no shared content. Afterwards at most
one triplet per query class survives (the first one emitted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, DomainError, InsufficientClassesError

DEFAULT_RANK_GAP = 10


class TripletKind(Enum):
    EASY = "easy"
    SEMI_HARD = "semi_hard"
    HARD = "hard"


@dataclass(frozen=True)
class MiningConfig:
    mining_batch_size: int = 2048
    num_classes: int = 512
    rank_gap_threshold: int = DEFAULT_RANK_GAP
    margin: float = 0.1
    semi_hard_probability: float = 0.5
    mini_batch_size: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.mining_batch_size < 2:
            raise DomainError("mining_batch_size must be >= 2")
        if not 2 <= self.num_classes <= self.mining_batch_size:
            raise DomainError("num_classes must be in [2, mining_batch_size]")
        if self.rank_gap_threshold < 1:
            raise DomainError("rank_gap_threshold must be >= 1")
        if not (math.isfinite(self.margin) and self.margin > 0):
            raise DomainError("margin must be positive and finite")
        if not 0.0 <= self.semi_hard_probability <= 1.0:
            raise DomainError("semi_hard_probability must be in [0, 1]")
        if self.mini_batch_size < 1:
            raise DomainError("mini_batch_size must be >= 1")


@dataclass(frozen=True)
class NeighborRanking:
    """All non-query indices ordered by ascending squared distance."""

    query: int
    indices: np.ndarray
    distances: np.ndarray
    labels: np.ndarray | None = None


@dataclass(frozen=True)
class Triplet:
    query: int
    positive: int
    negative: int
    difficulty: TripletKind

    def __post_init__(self):
        if self.query == self.positive:
            raise DomainError("query and positive must be different images")


def classify_triplet(d_qp: float, d_qn: float, margin: float) -> TripletKind:
    """Difficulty of a triplet given its realized squared distances."""
    for name, value in (("d_qp", d_qp), ("d_qn", d_qn), ("margin", margin)):
        if not math.isfinite(value):
            raise DomainError(f"{name} must be finite, got {value}")
    if d_qp < 0 or d_qn < 0:
        raise DomainError(f"distances must be non-negative, got ({d_qp}, {d_qn})")
    if margin <= 0:
        raise DomainError(f"margin must be positive, got {margin}")
    if d_qn < d_qp:
        return TripletKind.HARD
    if d_qn < d_qp + margin:
        return TripletKind.SEMI_HARD
    return TripletKind.EASY


def rank_neighbors(descriptors, query: int, labels=None) -> NeighborRanking:
    """Exact brute-force ranking; ties break toward the lower index."""
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError(f"need at least 2 descriptors, got shape {x.shape}")
    if not 0 <= query < x.shape[0]:
        raise DomainError(f"query index {query} out of range")
    d2 = ((x - x[query]) ** 2).sum(axis=1)
    others = np.delete(np.arange(x.shape[0]), query)
    order = np.argsort(d2[others], kind="stable")
    indices = others[order]
    ranked_labels = None
    if labels is not None:
        ranked_labels = np.asarray(labels)[indices]
    return NeighborRanking(query, indices, d2[indices], ranked_labels)


def mine_triplets(descriptors, labels, config: MiningConfig) -> list:
    """Mine one round of triplets from descriptors and aligned labels."""
    x = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError(
            f"descriptors {x.shape} and labels {y.shape} are not aligned"
        )
    if np.unique(y).size < 2:
        return []

    rng = np.random.default_rng(config.seed)
    emitted: list[Triplet] = []
    for q in range(x.shape[0]):
        ranking = rank_neighbors(x, q)
        ranked_labels = y[ranking.indices]
        negatives = np.flatnonzero(ranked_labels != y[q])
        if negatives.size == 0:
            continue
        n_pos = int(negatives[0])
        p_pos: int | None = None
        if n_pos > 0 and rng.random() < config.semi_hard_probability:
            p_pos = n_pos - 1
        else:
            later = np.flatnonzero(ranked_labels[n_pos + 1:] == y[q])
            if later.size == 0:
                continue
            p_pos = n_pos + 1 + int(later[0])
            if p_pos - n_pos >= config.rank_gap_threshold:
                continue
        kind = classify_triplet(
            float(ranking.distances[p_pos]), float(ranking.distances[n_pos]), config.margin
        )
        if kind is TripletKind.EASY:
            # Consecutive-rank positives can land past the margin; the
            # emitted taxonomy only distinguishes semi-hard from hard.
            kind = TripletKind.SEMI_HARD
        emitted.append(
            Triplet(q, int(ranking.indices[p_pos]), int(ranking.indices[n_pos]), kind)
        )

    kept: list[Triplet] = []
    seen_classes = set()
    for triplet in emitted:
        cls = y[triplet.query]
        if cls not in seen_classes:
            seen_classes.add(cls)
            kept.append(triplet)
    return kept


def batch_triplets(triplets, mini_batch_size: int, seed: int) -> list:
    """Seeded shuffle, then chunks; the last chunk may be short."""
    if mini_batch_size < 1:
        raise DomainError(f"mini_batch_size must be >= 1, got {mini_batch_size}")
    order = np.random.default_rng(seed).permutation(len(triplets))
    shuffled = [triplets[i] for i in order]
    return [
        shuffled[start:start + mini_batch_size]
        for start in range(0, len(shuffled), mini_batch_size)
    ]


def sample_mining_pool(manifest, config: MiningConfig, seed: int):
    """Sample the mining pool: class labels first, then their images.

    Returns (entry_indices, labels): positions into manifest.entries plus
    the label of each sampled image. Images repeat only when the chosen
    classes hold fewer images than the requested pool size.
    """
    train = [(i, e) for i, e in enumerate(manifest.entries) if e.split == "train"]
    distinct = sorted({e.label for _, e in train})
    if len(distinct) < config.num_classes:
        raise InsufficientClassesError(
            f"manifest has {len(distinct)} train classes, mining needs {config.num_classes}"
        )
    rng = np.random.default_rng(seed)
    chosen = set(
        rng.choice(np.asarray(distinct), size=config.num_classes, replace=False).tolist()
    )
    pool = np.asarray([i for i, e in train if e.label in chosen])
    replace = pool.size < config.mining_batch_size
    picks = rng.choice(pool.size, size=config.mining_batch_size, replace=replace)
    indices = pool[picks]
    labels = np.asarray([manifest.entries[i].label for i in indices])
    return indices, labels
