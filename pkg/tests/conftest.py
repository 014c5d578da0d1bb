from __future__ import annotations

import pytest
import torch

from attrinet import dataset as ds


@pytest.fixture(autouse=True)
def _limit_threads():
    torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_dataset_root(tmp_path_factory):
    """A small fully annotated synthetic dataset shared across tests."""
    root = tmp_path_factory.mktemp("tinyds") / "data"
    ds.make_synthetic(root, num_samples=36, num_classes=3, size=64, rng_seed=11)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_root):
    return ds.ManifestDataset(tiny_dataset_root)
