import numpy as np
import pytest

from protoadapt.embedding import TrainConfig, train
from protoadapt.sinegen import SineGenConfig


@pytest.fixture(scope="session")
def quick_result():
    """A small model for unit tests; not the benchmark configuration."""
    cfg = TrainConfig(episodes=1500, val_tasks=0, embedding_dim=8, seed=0)
    return train(cfg, SineGenConfig(seed=0))


@pytest.fixture(scope="session")
def quick_model(quick_result):
    return quick_result.model


def random_embedded_task(rng, way=2, n_labeled_per_class=3, n_unlabeled=12, dim=4, spread=1.0):
    """Synthetic embedding-space task: gaussian class blobs."""
    centers = rng.normal(scale=4.0, size=(way, dim))
    labeled, labels = [], []
    for c in range(way):
        labeled.append(centers[c] + spread * rng.normal(size=(n_labeled_per_class, dim)))
        labels.extend([c] * n_labeled_per_class)
    hidden = rng.integers(way, size=n_unlabeled)
    unlabeled = centers[hidden] + spread * rng.normal(size=(n_unlabeled, dim))
    return np.vstack(labeled), np.array(labels), unlabeled, hidden, centers
