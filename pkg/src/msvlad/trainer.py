"""Three-stream training: triplet loss, Adam updates, mining cadence.

One parameter set describes the query, positive and negative of every
triplet (the three streams share weights), per-triplet gradients are
averaged over the mini-batch and applied with Adam. The triplet pool is
refreshed on a fixed iteration interval because descriptors drift as the
parameters move; between refreshes the shuffled mini-batches are consumed
in order and cycled if the interval outlasts them.

Checkpoints carry parameters, optimizer state and the active mini-batch
queue. Emitting a checkpoint rounds the live state to the serialized
float32 precision, so resuming from it replays the exact run.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator

import numpy as np

from . import rng as rng_streams
from .errors import DimensionError, DomainError, MiningExhaustedError
from .manifest import DatasetManifest
from .mining import MiningConfig, batch_triplets, mine_triplets, sample_mining_pool
from .netvlad import Descriptor, VladParams, vlad_backward, vlad_forward
from .pooling import PoolingMode, multiscale_columns
from .tensor_io import load_feature_map

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_HEADER = "iteration,loss,lr,triplet_pool_size"

_COLUMN_CACHE_SIZE = 4096


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    margin: float = 0.1
    lr_initial: float = 1e-5
    lr_final: float = 1e-6
    lr_drop_epoch: int = 3
    mining_interval: int = 8
    mining: MiningConfig = field(default_factory=MiningConfig)
    pooling: PoolingMode = PoolingMode.BOTH
    seed: int = 0
    checkpoint_interval: int = 100
    max_empty_mining_retries: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        if not self.lr_initial >= self.lr_final > 0:
            raise DomainError("need lr_initial >= lr_final > 0")
        if self.mining_interval < 1:
            raise DomainError("mining_interval must be >= 1")
        if self.checkpoint_interval < 1:
            raise DomainError("checkpoint_interval must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates mirroring the parameter shapes."""

    m: VladParams
    v: VladParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: VladParams) -> "AdamState":
        def zeros() -> VladParams:
            return VladParams(
                np.zeros_like(params.centers),
                np.zeros_like(params.weights),
                np.zeros_like(params.biases),
            )

        return cls(zeros(), zeros())

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step)


@dataclass
class Checkpoint:
    """Everything needed to continue (or evaluate) a run."""

    params: VladParams
    adam: AdamState
    iteration: int
    seed: int
    margin: float | None = None
    pooling: PoolingMode | None = None
    pending_batches: list = field(default_factory=list)
    batch_cursor: int = 0
    pool_size: int = 0

    @classmethod
    def initial(cls, params, seed, margin=None, pooling=None) -> "Checkpoint":
        return cls(params, AdamState.zeros_like(params), 0, seed, margin, pooling)

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            self.params.copy(),
            self.adam.copy(),
            self.iteration,
            self.seed,
            self.margin,
            self.pooling,
            [list(batch) for batch in self.pending_batches],
            self.batch_cursor,
            self.pool_size,
        )


def triplet_loss(q: Descriptor, p: Descriptor, n: Descriptor, margin: float):
    """Hinge ranking loss on squared distances and its three gradients."""
    qv, pv, nv = q.values, p.values, n.values
    if not qv.shape == pv.shape == nv.shape:
        raise DimensionError(
            f"descriptor lengths differ: {qv.shape}, {pv.shape}, {nv.shape}"
        )
    d_qp = float(((qv - pv) ** 2).sum())
    d_qn = float(((qv - nv) ** 2).sum())
    loss = margin + d_qp - d_qn
    if loss <= 0.0:
        zero = np.zeros_like(qv)
        return 0.0, zero, zero.copy(), zero.copy()
    return loss, 2.0 * (nv - pv), 2.0 * (pv - qv), 2.0 * (qv - nv)


def adam_step(params: VladParams, grads: VladParams, state: AdamState, lr: float):
    """Bias-corrected Adam update, applied to params in place."""
    if grads.centers.shape != params.centers.shape or grads.biases.shape != params.biases.shape:
        raise DimensionError("gradient shapes do not match parameters")
    state.step += 1
    t = state.step
    for p, g, m, v in (
        (params.centers, grads.centers, state.m.centers, state.v.centers),
        (params.weights, grads.weights, state.m.weights, state.v.weights),
        (params.biases, grads.biases, state.m.biases, state.v.biases),
    ):
        m[...] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, state


def _triplet_gradients(params, cols_q, cols_p, cols_n, margin):
    """Loss, parameter gradients and stream descriptors for one triplet."""
    desc_q, cache_q = vlad_forward(cols_q, params)
    desc_p, cache_p = vlad_forward(cols_p, params)
    desc_n, cache_n = vlad_forward(cols_n, params)
    loss, gq, gp, gn = triplet_loss(desc_q, desc_p, desc_n, margin)
    grads = None
    if loss > 0.0:
        grads = VladParams(
            np.zeros_like(params.centers),
            np.zeros_like(params.weights),
            np.zeros_like(params.biases),
        )
        for cache, upstream in ((cache_q, gq), (cache_p, gp), (cache_n, gn)):
            part, _ = vlad_backward(cache, params, upstream)
            grads.centers += part.centers
            grads.weights += part.weights
            grads.biases += part.biases
    return loss, grads, (desc_q, desc_p, desc_n)


def _quantize_state(params: VladParams, adam: AdamState) -> None:
    """Round live arrays to float32 values (the checkpoint precision)."""
    for holder in (params, adam.m, adam.v):
        for arr in (holder.centers, holder.weights, holder.biases):
            arr[...] = arr.astype(np.float32)


class _MiningRound:
    """Mines one pool and exposes it as entry-index mini-batches."""

    def __init__(self, batches, pool_size):
        self.batches = batches
        self.pool_size = pool_size


def _mine_round(manifest, config, params, describe, round_index):
    for attempt in range(config.max_empty_mining_retries + 1):
        name = f"round{round_index}" + (f"/retry{attempt}" if attempt else "")
        pool_indices, labels = sample_mining_pool(
            manifest, config.mining, rng_streams.derive_seed(config.seed, name + "/sample")
        )
        descriptors = np.stack([describe(int(i)) for i in pool_indices])
        mining_cfg = replace(
            config.mining, seed=rng_streams.derive_seed(config.seed, name + "/mine")
        )
        triplets = mine_triplets(descriptors, labels, mining_cfg)
        if triplets:
            batches = batch_triplets(
                triplets,
                config.mining.mini_batch_size,
                rng_streams.derive_seed(config.seed, name + "/batch"),
            )
            entry_batches = [
                [
                    (
                        int(pool_indices[t.query]),
                        int(pool_indices[t.positive]),
                        int(pool_indices[t.negative]),
                    )
                    for t in batch
                ]
                for batch in batches
            ]
            return _MiningRound(entry_batches, len(triplets))
        logger.warning(
            "mining round %d attempt %d produced no triplets; resampling",
            round_index,
            attempt,
        )
    raise MiningExhaustedError(
        f"mining round {round_index} produced no triplets after "
        f"{config.max_empty_mining_retries + 1} attempts; the sampled classes may "
        "be degenerate or the pool too small"
    )


def train(
    manifest: DatasetManifest,
    config: TrainConfig,
    start: Checkpoint,
    log_stream: io.TextIOBase | None = None,
) -> Iterator[Checkpoint]:
    """Run the loop from a checkpoint, yielding checkpoints on cadence.

    The CSV training log (iteration, mean mini-batch loss, learning rate,
    triplet pool size) goes to log_stream when given.
    """
    train_entries = manifest.split_entries("train")
    if len({e.label for e in train_entries}) < 2:
        raise DomainError("training needs at least 2 distinct train classes")

    params = start.params.copy()
    adam = start.adam.copy()
    _quantize_state(params, adam)
    batches = [list(b) for b in start.pending_batches]
    cursor = start.batch_cursor
    pool_size = start.pool_size

    @lru_cache(maxsize=_COLUMN_CACHE_SIZE)
    def columns_for(entry_index: int) -> np.ndarray:
        entry = manifest.entries[entry_index]
        fmap = load_feature_map(manifest.resolve(entry))
        return multiscale_columns(fmap, config.pooling).values

    def describe(entry_index: int) -> np.ndarray:
        return vlad_forward(columns_for(entry_index), params)[0].values

    rounds_per_epoch = max(
        1, math.ceil(len(train_entries) / config.mining.mining_batch_size)
    )

    if log_stream is not None and start.iteration == 0:
        log_stream.write(LOG_HEADER + "\n")

    for iteration in range(start.iteration + 1, config.iterations + 1):
        if (iteration - 1) % config.mining_interval == 0:
            round_index = (iteration - 1) // config.mining_interval
            round_ = _mine_round(manifest, config, params, describe, round_index)
            batches, cursor, pool_size = round_.batches, 0, round_.pool_size
            logger.info(
                "mining round %d at iteration %d: %d triplets in %d mini-batches",
                round_index, iteration, pool_size, len(batches),
            )
        if not batches:
            raise MiningExhaustedError("resumed checkpoint carries no mini-batches")

        batch = batches[cursor % len(batches)]
        cursor += 1

        total_loss = 0.0
        grads = VladParams(
            np.zeros_like(params.centers),
            np.zeros_like(params.weights),
            np.zeros_like(params.biases),
        )
        for qi, pi, ni in batch:
            loss, part, _ = _triplet_gradients(
                params, columns_for(qi), columns_for(pi), columns_for(ni), config.margin
            )
            total_loss += loss
            if part is not None:
                grads.centers += part.centers
                grads.weights += part.weights
                grads.biases += part.biases
        scale = 1.0 / len(batch)
        grads.centers *= scale
        grads.weights *= scale
        grads.biases *= scale
        mean_loss = total_loss * scale

        rounds_started = (iteration - 1) // config.mining_interval + 1
        epoch = (rounds_started - 1) // rounds_per_epoch
        lr = config.lr_final if epoch >= config.lr_drop_epoch else config.lr_initial
        adam_step(params, grads, adam, lr)

        if log_stream is not None:
            log_stream.write(f"{iteration},{mean_loss!r},{lr!r},{pool_size}\n")

        if iteration % config.checkpoint_interval == 0 or iteration == config.iterations:
            _quantize_state(params, adam)
            yield Checkpoint(
                params.copy(),
                adam.copy(),
                iteration,
                config.seed,
                config.margin,
                config.pooling,
                [list(b) for b in batches],
                cursor,
                pool_size,
            )
