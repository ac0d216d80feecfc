from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from angkit.core_types import kinect25

settings.register_profile("ci", deadline=None, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def topo():
    return kinect25()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_clip(rng, frames=10, joints=25, persons=2, spread=0.6):
    """Random finite coordinates; not a plausible skeleton, which is the
    point for invariance tests."""
    from angkit.core_types import Clip

    coords = rng.normal(scale=spread, size=(frames, joints, persons, 3))
    return Clip(coords=coords, valid_frames=frames)
