import pytest

from trinity_detector.data import (
    ToyGenConfig,
    generate_toy_dataset,
    load_manifest,
    samples_from_manifest,
)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """A small generated toy dataset shared across test modules."""
    out = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(ToyGenConfig(count=50, seed=11), out)
    return out


@pytest.fixture(scope="session")
def toy_manifest(toy_dir):
    return toy_dir / "manifest.jsonl"


@pytest.fixture(scope="session")
def toy_samples(toy_manifest):
    entries = load_manifest(toy_manifest)
    return samples_from_manifest(entries, toy_manifest)
