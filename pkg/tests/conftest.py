import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import build_trace  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simple_trace():
    """10 valid tokens, scores 1..10, entropy pinned at 0.55."""
    return build_trace(
        gogi=[float(i) for i in range(1, 11)],
        entropy=[0.55] * 10,
    )
