import numpy as np
import pytest
from hypothesis import settings

from vlcloc.geometry import default_room
from vlcloc.simlab import Protocol, SensorModel, default_lamps, generate_corpus
from vlcloc.spectra import Dataset, LabeledSample, Position, Spectrum

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_spectrum(*values, fill=0.0):
    vals = list(values) + [fill] * (11 - len(values))
    return Spectrum(tuple(float(v) for v in vals))


@pytest.fixture(scope="session")
def room():
    return default_room()


@pytest.fixture(scope="session")
def default_corpus(room):
    poly, layout = room
    return generate_corpus(poly, layout, default_lamps(), SensorModel(), Protocol(), seed=1)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(3)
    samples = []
    for rp, (x, y) in enumerate([(50.0, 50.0), (150.0, 50.0), (50.0, 135.0)]):
        for k in range(4):
            samples.append(LabeledSample(Spectrum.from_array(rng.integers(0, 5000, 11)),
                                         Position(x, y), rp, k))
    return Dataset(tuple(samples))
