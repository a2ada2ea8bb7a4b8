"""Request execution shared by the HTTP app and the in-process CLI."""

from __future__ import annotations

import io

import numpy as np

from .. import rng as rng_streams
from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import InsufficientSamplesError, ValidationError
from ..gradcheck import run_all
from ..manifest import load_manifest
from ..mining import MiningConfig
from ..netvlad import describe_image, kmeans_init
from ..pooling import PoolingMode, multiscale_columns
from ..retrieval import build_index, evaluate, query_index
from ..tensor_io import load_feature_map
from ..trainer import Checkpoint, TrainConfig, train
from . import schemas


def _sample_columns(manifest, mode: PoolingMode, sample_columns: int, seed: int) -> np.ndarray:
    """Pooled columns from train images (all images if no train split)."""
    entries = manifest.split_entries("train") or list(manifest.entries)
    if not entries:
        raise InsufficientSamplesError("manifest has no entries to sample columns from")
    order = rng_streams.stream(seed, "kmeans/images").permutation(len(entries))
    chunks, total = [], 0
    for idx in order:
        fmap = load_feature_map(manifest.resolve(entries[int(idx)]))
        chunks.append(multiscale_columns(fmap, mode).values)
        total += chunks[-1].shape[0]
        if total >= sample_columns:
            break
    columns = np.concatenate(chunks)
    if columns.shape[0] > sample_columns:
        keep = rng_streams.stream(seed, "kmeans/columns").choice(
            columns.shape[0], size=sample_columns, replace=False
        )
        columns = columns[np.sort(keep)]
    return columns


def handle_kmeans_init(req: schemas.KmeansInitRequest) -> schemas.KmeansInitResponse:
    manifest = load_manifest(req.manifest)
    mode = PoolingMode.parse(req.pooling)
    columns = _sample_columns(manifest, mode, req.sample_columns, req.seed)
    params = kmeans_init(columns, req.k, rng_streams.derive_seed(req.seed, "kmeans/lloyd"),
                         req.max_iters)
    checkpoint = Checkpoint.initial(params, req.seed, pooling=mode)
    save_checkpoint(checkpoint, req.checkpoint_out)
    return schemas.KmeansInitResponse(
        checkpoint=req.checkpoint_out, k=params.k, dim=params.dim, columns=columns.shape[0]
    )


class _LossTap(io.TextIOBase):
    """Tee for the CSV training log that remembers the last loss."""

    def __init__(self, inner):
        self.inner = inner
        self.last_loss = float("nan")

    def write(self, text: str) -> int:
        first = text.split(",", 2)
        if len(first) == 3 and first[0] != "iteration":
            self.last_loss = float(first[1])
        if self.inner is not None:
            self.inner.write(text)
        return len(text)


def handle_train(req: schemas.TrainRequest, log_stream=None) -> schemas.TrainResponse:
    manifest = load_manifest(req.manifest)
    start = load_checkpoint(req.checkpoint_in)
    s = req.settings
    config = TrainConfig(
        iterations=s.iterations,
        margin=s.margin,
        lr_initial=s.lr_initial,
        lr_final=s.lr_final,
        lr_drop_epoch=s.lr_drop_epoch,
        mining_interval=s.mining_interval,
        mining=MiningConfig(
            mining_batch_size=s.mining_batch_size,
            num_classes=s.num_classes,
            rank_gap_threshold=s.rank_gap_threshold,
            margin=s.margin,
            semi_hard_probability=s.semi_hard_probability,
            mini_batch_size=s.mini_batch_size,
            seed=s.seed,
        ),
        pooling=PoolingMode.parse(s.pooling),
        seed=s.seed,
        checkpoint_interval=s.checkpoint_interval,
        max_empty_mining_retries=s.max_empty_mining_retries,
    )

    opened = open(req.log_path, "a", encoding="utf-8") if req.log_path else None
    tap = _LossTap(opened if opened is not None else log_stream)
    last: Checkpoint | None = None
    try:
        for checkpoint in train(manifest, config, start, log_stream=tap):
            save_checkpoint(checkpoint, req.checkpoint_out)
            last = checkpoint
    finally:
        if opened is not None:
            opened.close()
    if last is None:
        raise ValidationError("training emitted no checkpoints")
    return schemas.TrainResponse(
        checkpoint=req.checkpoint_out,
        iterations=last.iteration,
        final_loss=tap.last_loss,
        pool_size=last.pool_size,
    )


def _pooling_from(req_pooling, checkpoint) -> PoolingMode:
    if req_pooling is not None:
        return PoolingMode.parse(req_pooling)
    if checkpoint.pooling is not None:
        return checkpoint.pooling
    return PoolingMode.BOTH


def handle_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    manifest = load_manifest(req.manifest)
    checkpoint = load_checkpoint(req.checkpoint)
    mode = _pooling_from(req.pooling, checkpoint)
    index = build_index(
        manifest, checkpoint.params, mode, req.resolutions, req.power_norm, req.threads
    )
    report = evaluate(
        manifest, index, checkpoint.params, mode, req.resolutions, req.power_norm, req.threads
    )
    return schemas.EvaluateResponse(map=report.map_score, per_query=report.per_query)


def handle_query(req: schemas.QueryRequest) -> schemas.QueryResponse:
    manifest = load_manifest(req.manifest)
    checkpoint = load_checkpoint(req.checkpoint)
    mode = _pooling_from(req.pooling, checkpoint)
    index = build_index(
        manifest, checkpoint.params, mode, req.resolutions, req.power_norm, req.threads
    )
    maps = [load_feature_map(path) for path in req.features]
    descriptor = describe_image(maps, mode, checkpoint.params, req.power_norm)
    hits = query_index(index, descriptor, req.top_k)
    return schemas.QueryResponse(
        results=[schemas.QueryHit(id=i, similarity=s) for i, s in hits]
    )


def handle_gradcheck(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
    report = run_all(
        req.seed, req.netvlad_instances, req.triplet_instances, req.pooling_instances
    )
    return schemas.GradcheckResponse(
        ok=report.ok, checks=report.checks, tolerances=report.tolerances
    )
