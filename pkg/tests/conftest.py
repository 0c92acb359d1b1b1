import numpy as np
import pytest

from agecontrast.data import FaceSample, LabeledDataset
from agecontrast.synth import SynthConfig, generate_dataset


def make_dataset(ages, identities, num_ages, input_dim=4, seed=0):
    """Hand-rolled dataset with given labels and random inputs."""
    rng = np.random.default_rng(seed)
    samples = [FaceSample(rng.normal(0.0, 1.0, input_dim), age, ident)
               for age, ident in zip(ages, identities)]
    return LabeledDataset(samples, num_ages)


@pytest.fixture(scope="session")
def grid_dataset():
    """6 identities x ages 1..5, one sample each: every anchor has exactly
    5 positive and 20 negative candidates."""
    ages, idents = [], []
    for ident in "ABCDEF":
        for age in range(1, 6):
            ages.append(age)
            idents.append(ident)
    return make_dataset(ages, idents, num_ages=5, seed=3)


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(num_identities=24, samples_per_identity=4, num_ages=15,
                      input_dim=16, identity_dims=6, age_dims=4, noise_std=0.05)
    ds, truth = generate_dataset(cfg, seed=5)
    return cfg, ds, truth
