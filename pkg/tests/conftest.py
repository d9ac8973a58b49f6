"""Shared fixtures. The synthetic dataset is built once and treated read-only;
tests that write artifacts must direct output at their own tmp_path or use
``fresh_dataset``."""

from __future__ import annotations

import pytest

import synthfix


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthfix")
    return synthfix.write_dataset(root)


@pytest.fixture(scope="session")
def loaded_manifest(dataset):
    from boxseed.manifest import load_manifest

    return load_manifest(dataset.manifest)


@pytest.fixture()
def fresh_dataset(tmp_path):
    return synthfix.write_dataset(tmp_path / "data")
