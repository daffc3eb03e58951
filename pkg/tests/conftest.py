import os
from pathlib import Path

import pytest

import synthetic_cmapss


def real_data_root():
    p = os.environ.get("CMAPSS_ROOT")
    if p and Path(p).exists():
        return Path(p)
    return None


requires_real_data = pytest.mark.skipif(
    real_data_root() is None,
    reason="real C-MAPSS data not available (set CMAPSS_ROOT to enable)",
)


@pytest.fixture(scope="session")
def fd003_small(tmp_path_factory):
    """Small two-mode surrogate for fast dataset/pipeline tests."""
    out = tmp_path_factory.mktemp("fd003_small")
    return synthetic_cmapss.generate("fd003", out, n_train=10, n_test=6, seed=3)


@pytest.fixture(scope="session")
def fd001_small(tmp_path_factory):
    out = tmp_path_factory.mktemp("fd001_small")
    return synthetic_cmapss.generate("fd001", out, n_train=8, n_test=4, seed=5)
