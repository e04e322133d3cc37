import numpy as np
import pytest

from pkge import TrainConfig, Vocabulary, make_synthetic_translation_kg
from pkge.data import Dataset


@pytest.fixture(scope="session")
def synthetic_kg():
    """The 50-entity translation KG used across trainer and eval tests."""
    return make_synthetic_translation_kg(50, 4, 16, 100, seed=42)


@pytest.fixture(scope="session")
def synthetic_config():
    return TrainConfig(
        dim=16, margin=1.0, learning_rate=0.01, norm="L1",
        max_epochs=200, convergence_eps=0.0, seed=42,
    )


@pytest.fixture
def tiny_vocab():
    return Vocabulary(("A", "B", "C", "D"), ("r0", "r1"))


def random_kb(rng: np.random.Generator, n_entities=None, n_relations=None) -> Dataset:
    """A small random KB with train/valid/test splits for oracle tests."""
    ne = int(n_entities or rng.integers(3, 11))
    nr = int(n_relations or rng.integers(1, 4))
    n = int(rng.integers(5, 26))
    triples = np.stack(
        [
            rng.integers(0, ne, size=n),
            rng.integers(0, nr, size=n),
            rng.integers(0, ne, size=n),
        ],
        axis=1,
    ).astype(np.int64)
    triples = np.unique(triples, axis=0)
    rng.shuffle(triples)
    n = len(triples)
    cut1, cut2 = max(1, int(0.7 * n)), max(2, int(0.85 * n))
    vocab = Vocabulary(
        tuple(f"e{i}" for i in range(ne)), tuple(f"r{i}" for i in range(nr))
    )
    return Dataset(
        train=triples[:cut1], valid=triples[cut1:cut2], test=triples[cut2:], vocab=vocab
    )
