import numpy as np
import pytest

from orthoview.geometry import PointCloud
from orthoview.rng import stream


@pytest.fixture
def rng():
    return stream(1234, "tests")


@pytest.fixture
def random_cloud(rng):
    return PointCloud(points=rng.uniform(-1.0, 1.0, size=(64, 3)))
