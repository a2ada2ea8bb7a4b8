"""Trainable VLAD aggregation over column features.

Each column x is soft-assigned to K clusters through a softmax over
w_k . x + b_k, residuals against the cluster centers c_k are accumulated,
each cluster's residual block is L2-normalized (intra-normalization), the
blocks are flattened cluster-major, optionally passed through a signed
square root (power normalization), and finally L2-normalized globally.

Parameters are initialized from a k-means clustering of sample columns:
centers from Lloyd's algorithm, w_k = 2*a*c_k and b_k = -a*|c_k|^2, with
the sharpness a chosen so the mean ratio between the largest and second
largest assignment over the sample is about 100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CacheError,
    DimensionError,
    DomainError,
    InsufficientSamplesError,
    NonFiniteError,
)
from .pooling import ColumnFeatureSet, PoolingMode, multiscale_columns

# Below this L2 norm a vector is treated as zero instead of normalized.
NORM_EPS = 1e-12

# Fallback softmax sharpness when the mean-ratio search cannot converge.
ALPHA_FALLBACK = 25.0

ALPHA_TARGET_RATIO = 100.0


@dataclass
class VladParams:
    """Cluster centers, assignment weights and biases; all K x D / K."""

    centers: np.ndarray
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if c.ndim != 2:
            raise DimensionError(f"centers must be K x D, got shape {c.shape}")
        if c.shape[0] < 2 or c.shape[1] < 1:
            raise DimensionError(f"need K >= 2 and D >= 1, got {c.shape}")
        if w.shape != c.shape:
            raise DimensionError(f"weights shape {w.shape} != centers shape {c.shape}")
        if b.shape != (c.shape[0],):
            raise DimensionError(f"biases must have shape {(c.shape[0],)}, got {b.shape}")
        for arr in (c, w, b):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError("parameters contain non-finite values")
        self.centers, self.weights, self.biases = c, w, b

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> "VladParams":
        return VladParams(self.centers.copy(), self.weights.copy(), self.biases.copy())

    def fingerprint(self) -> tuple:
        return (float(self.centers.sum()), float(self.weights.sum()), float(self.biases.sum()))


@dataclass(frozen=True)
class Descriptor:
    """Flat K*D image descriptor; unit norm unless degenerate all-zero."""

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by vlad_backward."""

    columns: np.ndarray        # (N, D)
    assignments: np.ndarray    # (N, K), rows sum to 1
    vlad: np.ndarray           # (K, D) residual sums before normalization
    intra_norms: np.ndarray    # (K,)
    power_norm: bool
    params_fingerprint: tuple


def _as_matrix(columns) -> np.ndarray:
    vals = columns.values if isinstance(columns, ColumnFeatureSet) else columns
    mat = np.asarray(vals, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise DimensionError(f"columns must be a non-empty N x D matrix, got {mat.shape}")
    return mat


def _l2_normalized(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm <= NORM_EPS:
        return np.zeros_like(v)
    return v / norm


def vlad_forward(columns, params: VladParams, power_norm: bool = False):
    """Aggregate columns into a descriptor; returns (descriptor, cache)."""
    x = _as_matrix(columns)
    if x.shape[1] != params.dim:
        raise DimensionError(f"columns have dim {x.shape[1]}, parameters expect {params.dim}")

    logits = x @ params.weights.T + params.biases
    logits -= logits.max(axis=1, keepdims=True)
    assign = np.exp(logits)
    assign /= assign.sum(axis=1, keepdims=True)

    vlad = assign.T @ x - assign.sum(axis=0)[:, None] * params.centers
    norms = np.linalg.norm(vlad, axis=1)
    intra = np.where(norms[:, None] > NORM_EPS, vlad / np.maximum(norms, NORM_EPS)[:, None], 0.0)

    flat = intra.reshape(-1)
    if power_norm:
        flat = np.sign(flat) * np.sqrt(np.abs(flat))
    descriptor = Descriptor(_l2_normalized(flat))
    cache = ForwardCache(x, assign, vlad, norms, power_norm, params.fingerprint())
    return descriptor, cache


def vlad_backward(cache: ForwardCache, params: VladParams, grad_descriptor):
    """Exact gradients of the forward map.

    Returns (param_grads, column_grads) where param_grads is a VladParams
    carrying d/dcenters, d/dweights and d/dbiases.
    """
    if cache.params_fingerprint != params.fingerprint():
        raise CacheError("cache was computed with different parameter values")
    x, assign = cache.columns, cache.assignments
    k, d = params.k, params.dim
    if x.shape[1] != d or assign.shape != (x.shape[0], k) or cache.vlad.shape != (k, d):
        raise CacheError("cache shapes do not match the parameters")
    ghat = np.asarray(grad_descriptor, dtype=np.float64).reshape(-1)
    if ghat.shape[0] != k * d:
        raise DimensionError(f"grad_descriptor must have length {k * d}, got {ghat.shape[0]}")

    norms = cache.intra_norms
    live = norms > NORM_EPS
    intra = np.where(live[:, None], cache.vlad / np.maximum(norms, NORM_EPS)[:, None], 0.0)
    flat = intra.reshape(-1)
    if cache.power_norm:
        powered = np.sign(flat) * np.sqrt(np.abs(flat))
    else:
        powered = flat
    gnorm = float(np.linalg.norm(powered))

    # Global L2 normalization.
    if gnorm > NORM_EPS:
        y = powered / gnorm
        grad_powered = (ghat - y * float(ghat @ y)) / gnorm
    else:
        grad_powered = np.zeros_like(ghat)

    # Signed square root; subgradient 0 where the input is exactly 0.
    if cache.power_norm:
        grad_flat = np.where(flat != 0.0, grad_powered * 0.5 / np.sqrt(np.abs(flat) + (flat == 0.0)), 0.0)
    else:
        grad_flat = grad_powered

    # Intra-normalization per cluster block.
    gu = grad_flat.reshape(k, d)
    inner = (gu * intra).sum(axis=1)
    grad_vlad = np.where(
        live[:, None], (gu - intra * inner[:, None]) / np.maximum(norms, NORM_EPS)[:, None], 0.0
    )

    # Residual accumulation: vlad = assign.T @ x - sum(assign) * centers.
    mass = assign.sum(axis=0)
    grad_centers = -mass[:, None] * grad_vlad
    grad_assign = x @ grad_vlad.T - (grad_vlad * params.centers).sum(axis=1)
    grad_columns = assign @ grad_vlad

    # Softmax over clusters.
    grad_logits = assign * (grad_assign - (assign * grad_assign).sum(axis=1, keepdims=True))
    grad_weights = grad_logits.T @ x
    grad_biases = grad_logits.sum(axis=0)
    grad_columns += grad_logits @ params.weights

    return VladParams(grad_centers, grad_weights, grad_biases), grad_columns


def _squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _squared_distances(x, centers[:1]).min(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[i] = x[idx]
        closest = np.minimum(closest, _squared_distances(x, centers[i:i + 1]).min(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iters: int, tol: float = 1e-6):
    k = centers.shape[0]
    prev_sse = np.inf
    for _ in range(max_iters):
        d2 = _squared_distances(x, centers)
        assign = d2.argmin(axis=1)
        # Reseed empty clusters to the sample farthest from its center.
        for _ in range(k):
            counts = np.bincount(assign, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if empties.size == 0:
                break
            own = d2[np.arange(x.shape[0]), assign].copy()
            for cluster in empties:
                farthest = int(own.argmax())
                centers[cluster] = x[farthest]
                own[farthest] = -1.0
            d2 = _squared_distances(x, centers)
            assign = d2.argmin(axis=1)
        sse = float(d2[np.arange(x.shape[0]), assign].sum())
        for cluster in range(k):
            members = assign == cluster
            if members.any():
                centers[cluster] = x[members].mean(axis=0)
        if np.isfinite(prev_sse) and prev_sse - sse <= tol * max(prev_sse, NORM_EPS):
            break
        prev_sse = sse
    return centers


def _solve_alpha(x: np.ndarray, centers: np.ndarray) -> float:
    """Sharpness giving mean top-two assignment ratio ~ ALPHA_TARGET_RATIO."""
    d2 = np.sort(_squared_distances(x, centers), axis=1)
    gaps = d2[:, 1] - d2[:, 0]
    if gaps.max() <= 0.0:
        return ALPHA_FALLBACK
    target = np.log(ALPHA_TARGET_RATIO)

    def log_mean_ratio(alpha: float) -> float:
        scaled = alpha * gaps
        peak = scaled.max()
        return peak + np.log(np.mean(np.exp(scaled - peak)))

    hi = 1.0
    while log_mean_ratio(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            return ALPHA_FALLBACK
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if log_mean_ratio(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kmeans_init(samples, k: int, seed: int, max_iters: int = 100) -> VladParams:
    """Cluster sample columns and derive initial VLAD parameters."""
    x = _as_matrix(samples)
    if max_iters < 1:
        raise DomainError(f"max_iters must be >= 1, got {max_iters}")
    if x.shape[0] < k:
        raise InsufficientSamplesError(f"{x.shape[0]} samples cannot seed {k} clusters")
    rng = np.random.default_rng(seed)
    centers = _lloyd(x, _kmeans_plus_plus(x, k, rng), max_iters)
    alpha = _solve_alpha(x, centers)
    weights = 2.0 * alpha * centers
    biases = -alpha * (centers * centers).sum(axis=1)
    return VladParams(centers, weights, biases)


def describe_image(
    maps, mode: PoolingMode, params: VladParams, power_norm: bool = False
) -> Descriptor:
    """Descriptor for one image given its maps at one or more resolutions.

    Per-map descriptors are summed and renormalized, so a single map passes
    through unchanged and duplicates are idempotent.
    """
    if not maps:
        raise DomainError("describe_image needs at least one feature map")
    for fmap in maps:
        if fmap.channels != params.dim:
            raise DimensionError(
                f"map has {fmap.channels} channels, parameters expect {params.dim}"
            )
    parts = [
        vlad_forward(multiscale_columns(fmap, mode), params, power_norm)[0].values
        for fmap in maps
    ]
    if len(parts) == 1:
        return Descriptor(parts[0])
    return Descriptor(_l2_normalized(np.sum(parts, axis=0)))
