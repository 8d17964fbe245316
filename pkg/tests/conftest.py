"""Shared fixtures and instance generators for the test suite."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from pacbound.data import LabeledDataset, mnist_paths, DataError
from pacbound.nn import MlpArchitecture

from oracles import hidden_preactivation_margin

# Gradient tests step 1e-5 per coordinate; instances whose hidden
# pre-activations sit closer to the ReLU kink than this are resampled.
KINK_MARGIN = 1e-3


def mnist_dir() -> Path | None:
    """Directory with the four IDX files, or None when unavailable."""
    candidates = []
    env = os.environ.get("PACBOUND_DATA_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    for candidate in candidates:
        try:
            mnist_paths(candidate)
            return candidate
        except DataError:
            continue
    return None


requires_mnist = pytest.mark.skipif(
    mnist_dir() is None,
    reason="MNIST IDX files not found (set PACBOUND_DATA_DIR or place them in ./data)",
)


def random_instance(rng, widths, m, weight_scale=1.0, margin=KINK_MARGIN):
    """Random net + batch whose hidden pre-activations avoid the ReLU kink."""
    arch = MlpArchitecture(tuple(widths))
    for _ in range(200):
        w = rng.normal(0.0, weight_scale, arch.param_count)
        features = rng.uniform(0.0, 1.0, (m, arch.input_dim))
        labels = rng.choice([-1.0, 1.0], m)
        if hidden_preactivation_margin(arch.unpack(w), features) > margin:
            return arch, w, features, labels
    raise RuntimeError("could not sample a kink-separated instance")


def small_dataset(rng, m, k):
    features = rng.uniform(0.0, 1.0, (m, k))
    labels = rng.choice([-1.0, 1.0], m)
    return LabeledDataset(features, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
