import numpy as np
import pytest

from rankcal import LabeledQuery, PairwiseScores, Ranking


def random_query(rng: np.random.Generator, k: int, with_embeddings: bool = False,
                 dim: int = 3, query_id: str = "q") -> LabeledQuery:
    """Arbitrary-model query: probs need not be complementary."""
    probs = rng.uniform(0.0, 1.0, size=(k, k))
    ranks = rng.permutation(k) + 1
    emb = rng.standard_normal((k, dim)) if with_embeddings else None
    return LabeledQuery(query_id, PairwiseScores(probs), Ranking(ranks), embeddings=emb)


def random_dataset(seed: int, n: int, k_max: int = 8, with_embeddings: bool = False):
    rng = np.random.default_rng(seed)
    return [
        random_query(rng, int(rng.integers(1, k_max + 1)), with_embeddings,
                     query_id=f"q{i}")
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
