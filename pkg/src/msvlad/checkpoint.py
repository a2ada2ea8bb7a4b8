"""Checkpoint directories: parameter tensors plus a JSON sidecar.

A checkpoint directory holds one tensor file per array

    centers.msvf  weights.msvf  biases.msvf
    adam_m_centers.msvf ... adam_v_biases.msvf

and meta.json with the scalar state (iteration, optimizer step, seed,
config echo, pending mini-batches). Serialization is deterministic:
loading a checkpoint and saving it again reproduces the bytes exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .netvlad import VladParams
from .pooling import PoolingMode
from .tensor_io import read_tensor, write_tensor
from .trainer import AdamState, Checkpoint

_ARRAYS = (
    ("centers", lambda c: c.params.centers),
    ("weights", lambda c: c.params.weights),
    ("biases", lambda c: c.params.biases),
    ("adam_m_centers", lambda c: c.adam.m.centers),
    ("adam_m_weights", lambda c: c.adam.m.weights),
    ("adam_m_biases", lambda c: c.adam.m.biases),
    ("adam_v_centers", lambda c: c.adam.v.centers),
    ("adam_v_weights", lambda c: c.adam.v.weights),
    ("adam_v_biases", lambda c: c.adam.v.biases),
)


def save_checkpoint(checkpoint: Checkpoint, directory) -> Path:
    """Write a checkpoint directory; arrays are stored as float32."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, getter in _ARRAYS:
        arr = getter(checkpoint)
        write_tensor(directory / f"{name}.msvf", arr.shape, arr.reshape(-1))
    meta = {
        "batch_cursor": checkpoint.batch_cursor,
        "dim": checkpoint.params.dim,
        "iteration": checkpoint.iteration,
        "k": checkpoint.params.k,
        "margin": checkpoint.margin,
        "pending_batches": [[list(t) for t in batch] for batch in checkpoint.pending_batches],
        "pool_size": checkpoint.pool_size,
        "pooling": checkpoint.pooling.value if checkpoint.pooling else None,
        "seed": checkpoint.seed,
        "step": checkpoint.adam.step,
    }
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return directory


def load_checkpoint(directory) -> Checkpoint:
    """Read a checkpoint directory back into memory."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise CheckpointError(f"no checkpoint at {directory} (meta.json missing)")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)

    arrays = {}
    for name, _ in _ARRAYS:
        path = directory / f"{name}.msvf"
        if not path.is_file():
            raise CheckpointError(f"checkpoint {directory} is missing {name}.msvf")
        shape, values = read_tensor(path)
        arrays[name] = np.asarray(values, dtype=np.float64).reshape(shape)

    k, dim = int(meta["k"]), int(meta["dim"])
    if arrays["centers"].shape != (k, dim):
        raise CheckpointError(
            f"centers shape {arrays['centers'].shape} disagrees with meta ({k}, {dim})"
        )
    try:
        params = VladParams(arrays["centers"], arrays["weights"], arrays["biases"])
        adam = AdamState(
            VladParams(
                arrays["adam_m_centers"], arrays["adam_m_weights"], arrays["adam_m_biases"]
            ),
            VladParams(
                arrays["adam_v_centers"], arrays["adam_v_weights"], arrays["adam_v_biases"]
            ),
            int(meta["step"]),
        )
    except Exception as exc:
        raise CheckpointError(f"checkpoint {directory} is inconsistent: {exc}") from exc

    pooling = PoolingMode.parse(meta["pooling"]) if meta.get("pooling") else None
    pending = [[tuple(int(i) for i in t) for t in batch] for batch in meta["pending_batches"]]
    return Checkpoint(
        params,
        adam,
        int(meta["iteration"]),
        int(meta["seed"]),
        meta.get("margin"),
        pooling,
        pending,
        int(meta["batch_cursor"]),
        int(meta.get("pool_size", 0)),
    )
