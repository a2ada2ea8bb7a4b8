from __future__ import annotations

import pytest

from fixtures import make_retrieval_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Shared small dataset: 8 classes, 4/2/1 train/gallery/query images."""
    root = tmp_path_factory.mktemp("smallds")
    manifest_path = make_retrieval_dataset(
        root, classes=8, per_class=(4, 2, 1), channels=8,
        resolution_grids={336: (8, 8)}, seed=7,
    )
    return manifest_path


@pytest.fixture(scope="session")
def multires_dataset(tmp_path_factory):
    """Dataset with three resolutions per image."""
    root = tmp_path_factory.mktemp("multires")
    manifest_path = make_retrieval_dataset(
        root, classes=6, per_class=(3, 2, 1), channels=8,
        resolution_grids={224: (6, 6), 336: (9, 9), 504: (13, 13)}, seed=11,
    )
    return manifest_path
