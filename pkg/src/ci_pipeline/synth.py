"""Synthetic datasets with planted common/niche like structure.

Topic centers are drawn uniformly from [-10, 10]^d, rejection-sampled until
all pairwise distances reach 8 * cluster_std, so clustering recovery is
unambiguous. The first ``common_topic_count`` topics are liked by every user
independently with ``common_like_prob``; each remaining (niche) topic is liked
by its own disjoint block of ``niche_users_per_topic`` users. The planted
popularity of a topic is the expected fraction of users liking it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DataError
from .model import EmbeddingRecord, LikesIndex

_MAX_CENTER_TRIES = 10_000
_MAX_REDRAWS = 1_000


@dataclass(frozen=True)
class SyntheticSpec:
    n_topics: int
    topic_dim: int
    n_users: int
    common_topic_count: int
    niche_users_per_topic: int
    images_per_topic: int
    cluster_std: float
    seed: int
    common_like_prob: float = 0.95

    def __post_init__(self):
        if self.n_topics < 2:
            raise DataError(f"n_topics must be >= 2, got {self.n_topics}")
        if self.topic_dim < 1:
            raise DataError(f"topic_dim must be >= 1, got {self.topic_dim}")
        if self.n_users < 1:
            raise DataError(f"n_users must be >= 1, got {self.n_users}")
        if not (0 <= self.common_topic_count < self.n_topics):
            raise DataError(
                f"common_topic_count must be in [0, n_topics), got {self.common_topic_count}"
            )
        if not (0 <= self.niche_users_per_topic <= self.n_users):
            raise DataError(
                f"niche_users_per_topic must be in [0, n_users], got {self.niche_users_per_topic}"
            )
        if self.images_per_topic < 1:
            raise DataError(f"images_per_topic must be >= 1, got {self.images_per_topic}")
        if not (self.cluster_std > 0):
            raise DataError(f"cluster_std must be > 0, got {self.cluster_std}")
        if not (0.0 <= self.common_like_prob <= 1.0):
            raise DataError(f"common_like_prob must be in [0, 1], got {self.common_like_prob}")

    @property
    def n_niche(self) -> int:
        return self.n_topics - self.common_topic_count


@dataclass(frozen=True)
class GroundTruth:
    """Planted structure: topic per image and expected per-topic popularity."""

    topic_of: Mapping[str, int]
    popularity: tuple[float, ...]


def _draw_centers(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    min_gap = 8.0 * spec.cluster_std
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < spec.n_topics:
        candidate = rng.uniform(-10.0, 10.0, size=spec.topic_dim)
        if all(np.linalg.norm(candidate - c) >= min_gap for c in centers):
            centers.append(candidate)
        else:
            tries += 1
            if tries > _MAX_CENTER_TRIES:
                raise DataError(
                    f"cannot place {spec.n_topics} topic centers at separation "
                    f">= {min_gap} inside [-10, 10]^{spec.topic_dim}"
                )
    return np.stack(centers)


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[EmbeddingRecord], LikesIndex, GroundTruth]:
    """Deterministically generate (embeddings, likes, ground truth) for a spec."""
    needed = spec.n_niche * spec.niche_users_per_topic
    if needed > spec.n_users:
        raise DataError(
            f"disjoint niche blocks need {needed} users but only {spec.n_users} exist"
        )
    rng = np.random.default_rng(spec.seed)
    centers = _draw_centers(rng, spec)

    records: list[EmbeddingRecord] = []
    topic_of: dict[str, int] = {}
    image_ids_by_topic: list[list[str]] = []
    for topic in range(spec.n_topics):
        ids = []
        noise = rng.normal(0.0, spec.cluster_std, size=(spec.images_per_topic, spec.topic_dim))
        for i in range(spec.images_per_topic):
            image_id = f"img{topic:03d}_{i:05d}"
            vector = (centers[topic] + noise[i]).astype(np.float32)
            records.append(EmbeddingRecord(image_id=image_id, vector=vector))
            topic_of[image_id] = topic
            ids.append(image_id)
        image_ids_by_topic.append(ids)

    users = [f"user{u:04d}" for u in range(spec.n_users)]
    liked: dict[str, set[str]] = {u: set() for u in users}

    def like_random_image(user: str, topic: int) -> None:
        idx = int(rng.integers(spec.images_per_topic))
        liked[user].add(image_ids_by_topic[topic][idx])

    for user in users:
        for topic in range(spec.common_topic_count):
            if rng.random() < spec.common_like_prob:
                like_random_image(user, topic)
    for block, topic in enumerate(range(spec.common_topic_count, spec.n_topics)):
        start = block * spec.niche_users_per_topic
        for u in range(start, start + spec.niche_users_per_topic):
            like_random_image(users[u], topic)

    # Every user must end up with at least one like; redraw the common-topic
    # coins for anyone left empty.
    for user in users:
        redraws = 0
        while not liked[user]:
            if spec.common_topic_count == 0 or spec.common_like_prob == 0.0:
                raise DataError(
                    f"user {user} cannot receive a like: no common topics to draw from"
                )
            if redraws >= _MAX_REDRAWS:
                topic = int(rng.integers(spec.common_topic_count))
                like_random_image(user, topic)
                break
            for topic in range(spec.common_topic_count):
                if rng.random() < spec.common_like_prob:
                    like_random_image(user, topic)
            redraws += 1

    popularity = tuple(
        spec.common_like_prob
        if topic < spec.common_topic_count
        else spec.niche_users_per_topic / spec.n_users
        for topic in range(spec.n_topics)
    )
    likes = LikesIndex(
        likes={u: frozenset(images) for u, images in liked.items()},
        total_users=spec.n_users,
    )
    return records, likes, GroundTruth(topic_of=topic_of, popularity=popularity)
