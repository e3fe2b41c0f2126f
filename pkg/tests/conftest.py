import numpy as np
import pytest

from ci_pipeline.model import EmbeddingRecord, LikesIndex


def record(image_id: str, *components) -> EmbeddingRecord:
    return EmbeddingRecord(image_id=image_id, vector=np.array(components, dtype=np.float32))


def likes_from(pairs) -> LikesIndex:
    return LikesIndex.from_pairs(pairs)


def random_records(rng: np.random.Generator, count: int, dim: int, prefix: str = "img"):
    vectors = rng.normal(size=(count, dim)).astype(np.float32)
    return [
        EmbeddingRecord(image_id=f"{prefix}{i:05d}", vector=vectors[i])
        for i in range(count)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
