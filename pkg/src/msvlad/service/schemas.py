"""Request/response models for the HTTP service.

The CLI builds these same models and either executes them in-process or
posts them to a running server, so this module is the single source of
truth for the operator surface. Paths refer to the filesystem the service
runs on.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

PoolingName = Literal["2x2", "3x3", "both"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KmeansInitRequest(_Strict):
    manifest: str
    checkpoint_out: str
    k: int = 64
    sample_columns: int = Field(default=20000, ge=1)
    pooling: PoolingName = "both"
    seed: int = Field(default=0, ge=0)
    max_iters: int = Field(default=100, ge=1)


class KmeansInitResponse(_Strict):
    checkpoint: str
    k: int
    dim: int
    columns: int


class TrainSettings(_Strict):
    iterations: int = Field(ge=1)
    margin: float = 0.1
    lr_initial: float = 1e-5
    lr_final: float = 1e-6
    lr_drop_epoch: int = 3
    mining_interval: int = 8
    checkpoint_interval: int = 100
    pooling: PoolingName = "both"
    seed: int = Field(default=0, ge=0)
    mining_batch_size: int = 2048
    num_classes: int = 512
    rank_gap_threshold: int = 10
    semi_hard_probability: float = 0.5
    mini_batch_size: int = 24
    max_empty_mining_retries: int = 3


class TrainRequest(_Strict):
    manifest: str
    checkpoint_in: str
    checkpoint_out: str
    settings: TrainSettings
    log_path: str | None = None


class TrainResponse(_Strict):
    checkpoint: str
    iterations: int
    final_loss: float
    pool_size: int


class EvaluateRequest(_Strict):
    manifest: str
    checkpoint: str
    pooling: PoolingName | None = None
    resolutions: list[int] | None = None
    power_norm: bool = False
    threads: int = Field(default=1, ge=1)


class EvaluateResponse(_Strict):
    map: float
    per_query: dict[str, float]


class QueryRequest(_Strict):
    manifest: str
    checkpoint: str
    features: list[str] = Field(min_length=1)
    pooling: PoolingName | None = None
    resolutions: list[int] | None = None
    power_norm: bool = False
    top_k: int | None = Field(default=None, ge=1)
    threads: int = Field(default=1, ge=1)


class QueryHit(_Strict):
    id: str
    similarity: float


class QueryResponse(_Strict):
    results: list[QueryHit]


class GradcheckRequest(_Strict):
    seed: int = Field(default=0, ge=0)
    netvlad_instances: int = Field(default=20, ge=1)
    triplet_instances: int = Field(default=20, ge=1)
    pooling_instances: int = Field(default=6, ge=1)


class GradcheckResponse(_Strict):
    ok: bool
    checks: dict[str, float]
    tolerances: dict[str, float]


class HealthResponse(_Strict):
    status: str
    version: str


class ErrorResponse(_Strict):
    error: str
    detail: str
