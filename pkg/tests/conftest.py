import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "scripts"))

from probes import multicopy  # noqa: E402
from spin_blocks import NoiseModel, build_blocks, build_hamiltonians  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def multicopy_system():
    """(n, r) → (blocks, hams) を返すファクトリ"""
    def factory(n: int, r: float):
        blocks = build_blocks(multicopy(n), NoiseModel(r))
        return blocks, build_hamiltonians(blocks)
    return factory
