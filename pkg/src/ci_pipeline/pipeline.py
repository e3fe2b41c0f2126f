"""End-to-end glue: records + likes -> PartitionModel -> CiRegressor."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .ci import merge_partitions
from .errors import ConfigError, DataError
from .model import (
    CiRegressor,
    EmbeddingRecord,
    LikesIndex,
    Partition,
    PartitionModel,
    PipelineConfig,
)
from .partition import kmeans_fit
from .reduction import fit_pca, identity_reducer, transform
from .regress import default_ridge_lambda, fit, normalize_targets, predict, r_squared, split_train_test


def stack_records(records: Sequence[EmbeddingRecord]) -> tuple[list[str], np.ndarray]:
    """Ids plus an n x d float64 matrix, validating a single shared dimension."""
    if not records:
        raise DataError("no embedding records")
    dims = {r.dimension for r in records}
    if len(dims) != 1:
        raise DataError(f"records carry mixed dimensions {sorted(dims)}")
    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate image ids")
    return ids, np.stack([r.vector.astype(np.float64) for r in records])


def fit_partition_model(
    records: Sequence[EmbeddingRecord],
    likes: LikesIndex,
    config: PipelineConfig,
    reducer_kind: str = "pca",
) -> PartitionModel:
    """Reduce, cluster into leaves, merge, and score a full partition model."""
    ids, X = stack_records(records)
    d = X.shape[1]
    if reducer_kind == "identity":
        if config.reduced_dim != d:
            raise ConfigError(
                f"identity reducer requires reduced_dim == embedding dimension "
                f"({config.reduced_dim} != {d})"
            )
        reducer = identity_reducer(d)
    elif reducer_kind == "pca":
        reducer = fit_pca(X, config.reduced_dim, config.seed)
    else:
        raise ConfigError(f"unknown reducer {reducer_kind!r}")

    reduced = transform(reducer, X)
    centroids, labels, _ = kmeans_fit(
        reduced,
        config.n_partitions,
        seed=config.seed,
        max_iters=config.kmeans_max_iters,
        tol=config.kmeans_tol,
    )

    leaves: list[Partition] = []
    for leaf_id in range(config.n_partitions):
        member_rows = np.flatnonzero(labels == leaf_id)
        if len(member_rows) == 0:
            continue  # empty leaves carry no images and no CI
        members = frozenset(ids[i] for i in member_rows)
        leaves.append(
            Partition(
                id=leaf_id,
                member_image_ids=members,
                centroid_reduced=reduced[member_rows].mean(axis=0),
                size=len(member_rows),
            )
        )
    merge_log, leaf_to_final, ci_scores = merge_partitions(leaves, likes, config)
    assignment = {image_id: int(label) for image_id, label in zip(ids, labels)}
    return PartitionModel(
        config=config,
        reducer=reducer,
        centroids=centroids,
        assignment=assignment,
        merge_log=merge_log,
        leaf_to_final=leaf_to_final,
        ci_scores=ci_scores,
    )


def image_targets(model: PartitionModel) -> tuple[dict[str, float], float, float]:
    """Normalized CI target per image, inherited from its final partition."""
    normalized, lo, hi = normalize_targets(model.ci_scores)
    targets = {
        image_id: normalized[model.leaf_to_final[leaf]]
        for image_id, leaf in model.assignment.items()
    }
    return targets, lo, hi


def train_regressor(
    model: PartitionModel,
    records: Sequence[EmbeddingRecord],
    train_fraction: float = 0.8,
    ridge_lambda: float | None = None,
    seed: int = 0,
) -> tuple[CiRegressor, float, float]:
    """Fit the fine-grained scorer on held-in images; returns train/test R^2.

    Images absent from the partition model are excluded from fitting.
    """
    targets, lo, hi = image_targets(model)
    by_id = {r.image_id: r for r in records}
    usable = [img for img in by_id if img in targets]
    if len(usable) < 2:
        raise DataError("not enough images with partition targets to train on")
    train_ids, test_ids = split_train_test(sorted(usable), train_fraction, seed)

    def matrix(id_list):
        X = np.stack([by_id[i].vector.astype(np.float64) for i in id_list])
        t = np.asarray([targets[i] for i in id_list])
        return X, t

    X_train, t_train = matrix(train_ids)
    if ridge_lambda is None:
        ridge_lambda = default_ridge_lambda(X_train)
    regressor = fit(X_train, t_train, ridge_lambda, target_min=lo, target_max=hi)
    X_test, t_test = matrix(test_ids)
    r2_train = r_squared(predict(regressor, X_train), t_train)
    r2_test = r_squared(predict(regressor, X_test), t_test)
    return regressor, r2_train, r2_test
