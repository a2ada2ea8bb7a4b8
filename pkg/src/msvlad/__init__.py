"""Multi-scale pooled column features with a trainable VLAD head.

The pipeline ingests dense convolutional feature maps from tensor files,
pools them at two scales, aggregates the pooled columns into a trainable
VLAD descriptor, learns the aggregation with a triplet ranking loss fed by
difficulty-aware mining, and evaluates retrieval quality as mean average
precision.
"""

from . import errors
from .checkpoint import load_checkpoint, save_checkpoint
from .manifest import DatasetManifest, ManifestEntry, Relevance, load_manifest, save_manifest
from .mining import (
    MiningConfig,
    NeighborRanking,
    Triplet,
    TripletKind,
    batch_triplets,
    classify_triplet,
    mine_triplets,
    rank_neighbors,
    sample_mining_pool,
)
from .netvlad import (
    Descriptor,
    ForwardCache,
    VladParams,
    describe_image,
    kmeans_init,
    vlad_backward,
    vlad_forward,
)
from .pooling import (
    ColumnFeatureSet,
    PoolingMode,
    column_count,
    extract_columns,
    max_pool,
    multiscale_backward,
    multiscale_columns,
)
from .retrieval import (
    DescriptorIndex,
    EvalReport,
    average_precision,
    build_index,
    combine_multires,
    evaluate,
    query_index,
)
from .tensor_io import (
    FeatureMap,
    load_feature_map,
    read_tensor,
    read_tensor_header,
    save_feature_map,
    write_tensor,
)
from .trainer import (
    AdamState,
    Checkpoint,
    TrainConfig,
    adam_step,
    train,
    triplet_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "ColumnFeatureSet",
    "DatasetManifest",
    "Descriptor",
    "DescriptorIndex",
    "EvalReport",
    "FeatureMap",
    "ForwardCache",
    "ManifestEntry",
    "MiningConfig",
    "NeighborRanking",
    "PoolingMode",
    "Relevance",
    "TrainConfig",
    "Triplet",
    "TripletKind",
    "VladParams",
    "adam_step",
    "average_precision",
    "batch_triplets",
    "build_index",
    "classify_triplet",
    "column_count",
    "combine_multires",
    "describe_image",
    "errors",
    "evaluate",
    "extract_columns",
    "kmeans_init",
    "load_checkpoint",
    "load_feature_map",
    "load_manifest",
    "max_pool",
    "mine_triplets",
    "multiscale_backward",
    "multiscale_columns",
    "query_index",
    "rank_neighbors",
    "read_tensor",
    "read_tensor_header",
    "save_checkpoint",
    "save_feature_map",
    "save_manifest",
    "sample_mining_pool",
    "train",
    "triplet_loss",
    "vlad_backward",
    "vlad_forward",
    "write_tensor",
]
