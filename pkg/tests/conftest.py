import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_simplex(rng, shape, num_classes):
    """Random per-pixel distributions, shape (B, C, H, W)."""
    raw = rng.gamma(0.7, size=(shape[0], num_classes) + tuple(shape[1:]))
    raw = np.maximum(raw, 1e-6)
    return torch.from_numpy(raw / raw.sum(axis=1, keepdims=True)).float()
