"""Common-interest scoring and partition refinement.

A partition's unique users are the users with at least ``min_likes`` liked
images inside it; its CI score is that count divided by the total number of
users. Partitions whose images sit close together (Ward distance below
``theta_image``) and whose user sets overlap strongly (IoU above ``theta_ci``)
are greedily merged, closest pair first, until no pair qualifies.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .model import LikesIndex, MergeEvent, Partition, PipelineConfig


def unique_users(
    partition_members: Iterable[str], likes: LikesIndex, min_likes: int = 1
) -> frozenset[str]:
    """Users with at least ``min_likes`` liked images inside the partition."""
    if min_likes < 1:
        raise DataError(f"min_likes must be >= 1, got {min_likes}")
    members = frozenset(partition_members)
    return frozenset(
        user
        for user, images in likes.likes.items()
        if len(images & members) >= min_likes
    )


def ci_score(
    partition_members: Iterable[str], likes: LikesIndex, min_likes: int = 1
) -> float:
    """Fraction of all users with >= min_likes liked images in the partition."""
    return len(unique_users(partition_members, likes, min_likes)) / likes.total_users


def user_iou(a: frozenset[str], b: frozenset[str]) -> float:
    """Jaccard overlap of two user sets; 0 when both are empty."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def ward_distance(p_a: Partition, p_b: Partition) -> float:
    """Increase-in-variance linkage in distance units.

    d(A, B) = sqrt(2 |A| |B| / (|A| + |B|)) * ||mu_A - mu_B||. For two
    singletons this reduces to the plain Euclidean distance.
    """
    if p_a.centroid_reduced.shape != p_b.centroid_reduced.shape:
        raise DataError(
            f"partitions {p_a.id} and {p_b.id} live in different reduced spaces"
        )
    gap = float(np.linalg.norm(p_a.centroid_reduced - p_b.centroid_reduced))
    size_factor = math.sqrt(2.0 * p_a.size * p_b.size / (p_a.size + p_b.size))
    return size_factor * gap


def _user_counts(members: frozenset[str], likers_of: dict[str, list[str]]) -> Counter:
    counts: Counter = Counter()
    for image in members:
        for user in likers_of.get(image, ()):
            counts[user] += 1
    return counts


def _uu_from_counts(counts: Counter, min_likes: int) -> frozenset[str]:
    return frozenset(u for u, c in counts.items() if c >= min_likes)


def merge_partitions(
    leaves: Sequence[Partition], likes: LikesIndex, config: PipelineConfig
) -> tuple[tuple[MergeEvent, ...], dict[int, int], dict[int, float]]:
    """Greedy dual-criterion merge loop over the leaf partitions.

    Among all pairs with Ward distance < theta_image AND user IoU > theta_ci,
    the closest pair merges first (ties: lowest id pair); distances to the
    merged partition come from the Lance-Williams Ward update, its centroid is
    the size-weighted mean. Repeats until no pair qualifies.

    Returns (merge_log, leaf_to_final, ci_scores over final partitions).
    """
    if not leaves:
        raise DataError("merge_partitions needs at least one leaf")
    total = sum(p.size for p in leaves)
    union = set()
    for p in leaves:
        union |= p.member_image_ids
    if len(union) != total:
        raise DataError("leaf partitions overlap")

    likers_of: dict[str, list[str]] = {}
    for user, images in likes.likes.items():
        for image in images:
            likers_of.setdefault(image, []).append(user)

    k = config.min_likes
    size: dict[int, int] = {}
    centroid: dict[int, np.ndarray] = {}
    counts: dict[int, Counter] = {}
    uu: dict[int, frozenset[str]] = {}
    for p in leaves:
        if p.id in size:
            raise DataError(f"duplicate leaf id {p.id}")
        size[p.id] = p.size
        centroid[p.id] = p.centroid_reduced
        counts[p.id] = _user_counts(p.member_image_ids, likers_of)
        uu[p.id] = _uu_from_counts(counts[p.id], k)

    def pair(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    ids = sorted(size)
    dist: dict[tuple[int, int], float] = {}
    iou: dict[tuple[int, int], float] = {}
    for a_pos, i in enumerate(ids):
        for j in ids[a_pos + 1 :]:
            gap = float(np.linalg.norm(centroid[i] - centroid[j]))
            factor = math.sqrt(2.0 * size[i] * size[j] / (size[i] + size[j]))
            dist[(i, j)] = factor * gap
            iou[(i, j)] = user_iou(uu[i], uu[j])

    # merged ids continue after both the configured leaf range and any
    # explicitly supplied leaf ids
    next_id = max(config.n_partitions, max(ids) + 1)
    active = set(ids)
    parent: dict[int, int] = {}
    merge_log: list[MergeEvent] = []
    while True:
        best = None
        for key, d in dist.items():
            if d < config.theta_image and iou[key] > config.theta_ci:
                cand = (d, key)
                if best is None or cand < best:
                    best = cand
        if best is None:
            break
        d_ij, (i, j) = best
        new_id = next_id
        next_id += 1
        merge_log.append(
            MergeEvent(
                left_id=i,
                right_id=j,
                new_id=new_id,
                ward_distance=d_ij,
                user_iou=iou[(i, j)],
            )
        )
        si, sj = size[i], size[j]
        size[new_id] = si + sj
        centroid[new_id] = (si * centroid[i] + sj * centroid[j]) / (si + sj)
        counts[new_id] = counts[i] + counts[j]
        uu[new_id] = _uu_from_counts(counts[new_id], k)
        parent[i] = new_id
        parent[j] = new_id
        active.discard(i)
        active.discard(j)
        # Lance-Williams Ward update against every other active partition.
        for other in sorted(active):
            so = size[other]
            d_io = dist.pop(pair(i, other))
            d_jo = dist.pop(pair(j, other))
            iou.pop(pair(i, other))
            iou.pop(pair(j, other))
            d2 = (
                (si + so) * d_io**2 + (sj + so) * d_jo**2 - so * d_ij**2
            ) / (si + sj + so)
            dist[pair(new_id, other)] = math.sqrt(max(d2, 0.0))
            iou[pair(new_id, other)] = user_iou(uu[new_id], uu[other])
        dist.pop((i, j))
        iou.pop((i, j))
        active.add(new_id)

    def resolve(pid: int) -> int:
        while pid in parent:
            pid = parent[pid]
        return pid

    leaf_to_final = {p.id: resolve(p.id) for p in leaves}
    ci_scores = {
        final: len(uu[final]) / likes.total_users
        for final in sorted(active)
    }
    return tuple(merge_log), leaf_to_final, ci_scores
