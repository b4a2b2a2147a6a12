import numpy as np
import pytest

from hardylab.geometry import Ball, Box


@pytest.fixture
def square():
    return Box((0.0, 0.0), (1.0, 1.0))


@pytest.fixture
def ball3():
    return Ball(1.0, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _cache_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HARDYLAB_CACHE_DIR", str(tmp_path / "cache"))
