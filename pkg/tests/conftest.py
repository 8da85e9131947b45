"""Shared builders for the test suite."""

import numpy as np
import pytest

from dimsift import (
    RegressionHead,
    Sample,
    SynthConfig,
    generate_synthetic,
    inject_dimension_noise,
)


def random_head(rng, n_dims, feature_dim, hidden_dim=None):
    """Random head, optionally with a shared hidden layer in front."""
    if hidden_dim is None:
        return RegressionHead(
            weights=rng.normal(size=(n_dims, feature_dim)),
            biases=rng.normal(size=n_dims),
        )
    return RegressionHead(
        weights=rng.normal(size=(n_dims, hidden_dim)),
        biases=rng.normal(size=n_dims),
        shared_weight=rng.normal(size=(hidden_dim, feature_dim)),
        shared_bias=rng.normal(size=hidden_dim),
    )


def random_sample(rng, feature_dim, n_dims, sid="z"):
    return Sample(sid, rng.normal(size=feature_dim), rng.normal(size=n_dims))


@pytest.fixture(scope="session")
def noisy_corpus():
    """400-sample corpus with 10% corruption in every dimension."""
    cfg = SynthConfig(400, 6, 3, label_noise_sd=0.1, teacher_seed=0, sample_seed=1)
    return inject_dimension_noise(generate_synthetic(cfg), 0.1, range(3), 2)


@pytest.fixture(scope="session")
def clean_corpus():
    cfg = SynthConfig(250, 5, 3, label_noise_sd=0.05, teacher_seed=4, sample_seed=5)
    return generate_synthetic(cfg)
