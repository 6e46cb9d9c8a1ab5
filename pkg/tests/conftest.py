import numpy as np
import pytest

from renalseg.volgrid import LabelVolume, Volume3


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_volume(rng, dims, spacing=(1.0, 1.0, 1.0), scale=1.0):
    return Volume3(rng.normal(0.0, scale, dims).astype(np.float32), spacing)


def random_mask(rng, dims, p=0.3, num_classes=2):
    return LabelVolume((rng.random(dims) < p).astype(np.uint8), num_classes)
