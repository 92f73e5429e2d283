import os

import numpy as np
import pytest

from galois_field import make_field
from nonbinary_ldpc import LdpcCode, build_ldpc


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SRLDPC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SRLDPC_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def gf4():
    return make_field(2)


@pytest.fixture
def gf16():
    return make_field(4)


@pytest.fixture
def tree_code(gf4):
    # Two checks sharing variable 2; the factor graph is a tree
    H = np.array([
        [1, 2, 3, 0, 0],
        [0, 0, 1, 3, 2],
    ])
    return LdpcCode(gf4, H)


@pytest.fixture
def small_code(gf16):
    return build_ldpc(gf16, 16, 4, 3, seed=3)


@pytest.fixture(scope="session")
def desk_code():
    return build_ldpc(make_field(4), 64, 8, 3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
