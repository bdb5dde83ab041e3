import numpy as np
import pytest

from coreinterp import load_dataset, make_synthetic


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 classes x 50 samples, one layer, moderate noise."""
    root = tmp_path_factory.mktemp("small_ds")
    manifest = make_synthetic(
        root, classes=4, per_class=50, height=3, width=3, depth=12, spread=0.5, seed=11
    )
    return load_dataset(manifest)


@pytest.fixture(scope="session")
def two_layer_dataset(tmp_path_factory):
    """3 classes x 40 samples over two layers of different depth."""
    root = tmp_path_factory.mktemp("two_layer_ds")
    manifest = make_synthetic(
        root,
        classes=3,
        per_class=40,
        height=2,
        width=2,
        depth=10,
        spread=0.4,
        seed=23,
        layer_depths=[6, 10],
    )
    return load_dataset(manifest)


@pytest.fixture(scope="session")
def one_hot_dataset(tmp_path_factory):
    """Each class activates a single channel; pins one relevant unit per class."""
    root = tmp_path_factory.mktemp("one_hot_ds")
    manifest = make_synthetic(
        root,
        classes=4,
        per_class=40,
        height=3,
        width=3,
        depth=8,
        spread=0.05,
        seed=5,
        channel_pattern="one_hot",
    )
    return load_dataset(manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
