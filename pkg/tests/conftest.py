"""Shared fixtures: small operators and datasets reused across test modules."""
import numpy as np
import pytest

from hydra_ct.dataset import DatasetConfig, GeometryConfig, build_dataset
from hydra_ct.phantoms import PhantomConfig
from hydra_ct.radon import estimate_operator_norm, make_operator


@pytest.fixture(scope="session")
def op16():
    op = make_operator(16, 16)
    estimate_operator_norm(op, iters=200, seed=0)
    return op


@pytest.fixture(scope="session")
def op32_sparse():
    # 32x32 grid, 8 of 32 angles retained
    op = make_operator(32, 32, 8)
    estimate_operator_norm(op, iters=200, seed=0)
    return op


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small on-disk dataset shared by dataset/training/CLI tests."""
    root = tmp_path_factory.mktemp("data") / "tiny"
    cfg = DatasetConfig(
        geometry=GeometryConfig(image_size=16, n_angles_full=16, n_views=8),
        phantom=PhantomConfig(size=16, seed=7),
        photons_per_bin=1000,
        splits={"train": 4, "val": 2, "test": 2},
        seed=7,
    )
    manifest = build_dataset(str(root), cfg, threads=1)
    return str(root), cfg, manifest
