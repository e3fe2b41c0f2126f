"""Domain types shared by the pipeline.

Pure data: no I/O, no algorithms. Every type validates its own invariants at
construction time and is immutable afterwards, so instances are safe to share
across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError

GROUP_COMM = "Comm"
GROUP_INTER = "Inter"
GROUP_SUBJ = "Subj"
GROUPS = (GROUP_COMM, GROUP_INTER, GROUP_SUBJ)


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One image id plus its fixed-dimension float32 feature vector."""

    image_id: str
    vector: np.ndarray

    def __post_init__(self):
        if not self.image_id:
            raise DataError("image_id must be a non-empty string")
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1 or vec.size == 0:
            raise DataError(f"vector for {self.image_id!r} must be 1-d and non-empty")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"vector for {self.image_id!r} contains non-finite values")
        object.__setattr__(self, "vector", vec)

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.vector.tobytes() == other.vector.tobytes()
        )

    def __hash__(self):
        return hash((self.image_id, self.vector.tobytes()))


@dataclass(frozen=True)
class LikesIndex:
    """user_id -> set of liked image ids, plus the total user count M."""

    likes: Mapping[str, frozenset[str]]
    total_users: int

    def __post_init__(self):
        if self.total_users != len(self.likes):
            raise DataError(
                f"total_users={self.total_users} does not match "
                f"{len(self.likes)} distinct user ids"
            )
        if self.total_users < 1:
            raise DataError("a likes index needs at least one user")
        for user, images in self.likes.items():
            if not user:
                raise DataError("user ids must be non-empty")
            if not images:
                raise DataError(f"user {user!r} has an empty like set")

    @classmethod
    def from_pairs(cls, pairs) -> "LikesIndex":
        """Build from (user_id, image_id) pairs; duplicates collapse."""
        by_user: dict[str, set[str]] = {}
        for user, image in pairs:
            by_user.setdefault(user, set()).add(image)
        frozen = {u: frozenset(imgs) for u, imgs in by_user.items()}
        return cls(likes=frozen, total_users=len(frozen))


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for partitioning, merging, and scoring.

    Defaults: 200 initial partitions, image-similarity threshold 3.0,
    user-overlap threshold 0.25, reduced dimension 7, one like per user
    per partition. The two thresholds are calibrated to the reduced space
    in use, so expect to re-tune them when switching reducers.
    """

    n_partitions: int = 200
    theta_image: float = 3.0
    theta_ci: float = 0.25
    reduced_dim: int = 7
    min_likes: int = 1
    seed: int = 0
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.n_partitions, int) or self.n_partitions < 2:
            raise ConfigError(f"n_partitions must be an integer >= 2, got {self.n_partitions}")
        if not (np.isfinite(self.theta_image) and self.theta_image > 0):
            raise ConfigError(f"theta_image must be > 0, got {self.theta_image}")
        if not (0 < self.theta_ci < 1):
            raise ConfigError(f"theta_ci must be in (0, 1), got {self.theta_ci}")
        if not isinstance(self.reduced_dim, int) or self.reduced_dim < 1:
            raise ConfigError(f"reduced_dim must be an integer >= 1, got {self.reduced_dim}")
        if not isinstance(self.min_likes, int) or self.min_likes < 1:
            raise ConfigError(f"min_likes must be an integer >= 1, got {self.min_likes}")
        if not isinstance(self.seed, int) or not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not isinstance(self.kmeans_max_iters, int) or self.kmeans_max_iters < 1:
            raise ConfigError(f"kmeans_max_iters must be >= 1, got {self.kmeans_max_iters}")
        if not (np.isfinite(self.kmeans_tol) and self.kmeans_tol >= 0):
            raise ConfigError(f"kmeans_tol must be >= 0, got {self.kmeans_tol}")


@dataclass(frozen=True, eq=False)
class Partition:
    """A cluster of images in the reduced space."""

    id: int
    member_image_ids: frozenset[str]
    centroid_reduced: np.ndarray
    size: int

    def __post_init__(self):
        if not self.member_image_ids:
            raise DataError(f"partition {self.id} has no members")
        if self.size != len(self.member_image_ids):
            raise DataError(
                f"partition {self.id}: size={self.size} != {len(self.member_image_ids)} members"
            )
        centroid = np.asarray(self.centroid_reduced, dtype=np.float64)
        if centroid.ndim != 1 or not np.all(np.isfinite(centroid)):
            raise DataError(f"partition {self.id}: centroid must be a finite 1-d vector")
        object.__setattr__(self, "centroid_reduced", centroid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return (
            self.id == other.id
            and self.member_image_ids == other.member_image_ids
            and np.array_equal(self.centroid_reduced, other.centroid_reduced)
        )


@dataclass(frozen=True)
class MergeEvent:
    """One accepted merge: which pair fused, under what distance and overlap."""

    left_id: int
    right_id: int
    new_id: int
    ward_distance: float
    user_iou: float

    def __post_init__(self):
        if self.left_id == self.right_id:
            raise DataError("a merge needs two distinct partitions")
        if not (np.isfinite(self.ward_distance) and self.ward_distance >= 0):
            raise DataError(f"ward_distance must be >= 0, got {self.ward_distance}")
        if not (0 <= self.user_iou <= 1):
            raise DataError(f"user_iou must be in [0, 1], got {self.user_iou}")


def replay_merges(leaf_ids, merge_log) -> dict[int, int]:
    """Re-run a merge log over leaf ids and return the leaf -> final map.

    Raises DataError if an event references an inactive partition or reuses
    an id, so a tampered log cannot silence itself.
    """
    active = set(leaf_ids)
    used = set(leaf_ids)
    parent: dict[int, int] = {}
    for event in merge_log:
        if event.left_id not in active or event.right_id not in active:
            raise DataError(
                f"merge event references inactive partitions "
                f"({event.left_id}, {event.right_id})"
            )
        if event.new_id in used:
            raise DataError(f"merge event reuses partition id {event.new_id}")
        active.discard(event.left_id)
        active.discard(event.right_id)
        active.add(event.new_id)
        used.add(event.new_id)
        parent[event.left_id] = event.new_id
        parent[event.right_id] = event.new_id

    def resolve(pid: int) -> int:
        while pid in parent:
            pid = parent[pid]
        return pid

    return {leaf: resolve(leaf) for leaf in leaf_ids}


@dataclass(frozen=True, eq=False)
class PartitionModel:
    """Fitted partitioning: reducer, leaf centroids, merge history, CI scores."""

    config: PipelineConfig
    reducer: "Reducer"  # noqa: F821 - lives in ci_pipeline.reduction
    centroids: np.ndarray
    assignment: Mapping[str, int]
    merge_log: tuple[MergeEvent, ...]
    leaf_to_final: Mapping[int, int]
    ci_scores: Mapping[int, float]

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2:
            raise DataError("centroids must be an N x r matrix")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "merge_log", tuple(self.merge_log))

        leaf_ids = set(self.leaf_to_final)
        for image_id, leaf in self.assignment.items():
            if leaf not in leaf_ids:
                raise DataError(f"image {image_id!r} assigned to unknown leaf {leaf}")
        final_ids = set(self.leaf_to_final.values())
        for final in final_ids:
            if self.leaf_to_final.get(final, final) != final:
                raise DataError(f"leaf_to_final is not idempotent at id {final}")
        if set(self.ci_scores) != final_ids:
            raise DataError("ci_scores keys do not match the final partition ids")
        for final, ci in self.ci_scores.items():
            if not (0.0 <= ci <= 1.0):
                raise DataError(f"CI score {ci} for partition {final} is outside [0, 1]")
        for event in self.merge_log:
            if not (event.ward_distance < self.config.theta_image):
                raise DataError(
                    f"merge {event.new_id} recorded at distance {event.ward_distance}, "
                    f"threshold {self.config.theta_image}"
                )
            if not (event.user_iou > self.config.theta_ci):
                raise DataError(
                    f"merge {event.new_id} recorded at IoU {event.user_iou}, "
                    f"threshold {self.config.theta_ci}"
                )
        replayed = replay_merges(leaf_ids, self.merge_log)
        if replayed != dict(self.leaf_to_final):
            raise DataError("replaying merge_log does not reproduce leaf_to_final")

    def final_of(self, image_id: str) -> int:
        return self.leaf_to_final[self.assignment[image_id]]


@dataclass(frozen=True, eq=False)
class CiRegressor:
    """Linear map from a raw embedding to a fine-grained interest score."""

    weights: np.ndarray
    bias: float
    ridge_lambda: float
    target_min: float
    target_max: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0:
            raise DataError("weights must be a non-empty 1-d vector")
        if not np.all(np.isfinite(weights)):
            raise DataError("weights contain non-finite values")
        object.__setattr__(self, "weights", weights)
        if not (np.isfinite(self.ridge_lambda) and self.ridge_lambda >= 0):
            raise DataError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if not (self.target_min < self.target_max):
            raise DataError(
                f"degenerate target normalization: min={self.target_min}, max={self.target_max}"
            )

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class GroupAssignment:
    """final partition id -> Comm/Inter/Subj, plus the two cumulative cuts."""

    group_of: Mapping[int, str]
    boundaries: tuple[int, int]

    def __post_init__(self):
        for pid, group in self.group_of.items():
            if group not in GROUPS:
                raise DataError(f"partition {pid} labeled with unknown group {group!r}")

    def members(self, group: str) -> frozenset[int]:
        return frozenset(pid for pid, g in self.group_of.items() if g == group)


@dataclass(frozen=True)
class AttributeTable:
    """Per-group label percentages with Comm-Subj deltas, plus numeric quantiles.

    ``rows`` maps a categorical attribute to (comm, inter, subj, delta)
    percentages and is ordered by delta descending. ``numeric_rows`` maps a
    numeric attribute to per-group (q25, q50, q75) triples (None when a group
    has no values for it).
    """

    rows: Mapping[str, tuple[float, float, float, float]]
    numeric_rows: Mapping[str, Mapping[str, tuple[float, float, float] | None]]

    def __post_init__(self):
        for name, (comm, inter, subj, delta) in self.rows.items():
            for value in (comm, inter, subj):
                if not (0.0 <= value <= 100.0):
                    raise DataError(f"percentage {value} for {name!r} outside [0, 100]")
            if delta != comm - subj:
                raise DataError(f"delta for {name!r} is not comm - subj")
