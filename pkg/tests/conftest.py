import sys
from pathlib import Path

import numpy as np
import pytest

from gridcast.autodiff import tune_allocator

sys.path.insert(0, str(Path(__file__).parent))

tune_allocator()


@pytest.fixture
def rng():
    return np.random.default_rng(0xBEEF)


def make_record(rng, height=12, width=12, n_frames=6, fps=30):
    """Random but valid measurement/truth record."""
    from gridcast.dataio import SequenceRecord

    frames = [
        (
            (rng.random((height, width)) < 0.2).astype(np.uint8),
            (rng.random((height, width)) < 0.2).astype(np.uint8),
        )
        for _ in range(n_frames)
    ]
    return SequenceRecord(height=height, width=width, frames=frames, fps=fps)
