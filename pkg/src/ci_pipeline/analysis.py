"""Downstream analysis: tertile groups, attribute deltas, corpus shares, ranking."""
from __future__ import annotations

from collections import Counter
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .model import (
    GROUP_COMM,
    GROUP_INTER,
    GROUP_SUBJ,
    GROUPS,
    AttributeTable,
    CiRegressor,
    EmbeddingRecord,
    GroupAssignment,
    PartitionModel,
)
from .partition import assign as nearest_centroid
from .reduction import transform
from .regress import predict


def group_partitions(
    ci_scores: Mapping[int, float], partition_image_counts: Mapping[int, int]
) -> GroupAssignment:
    """Split partitions into Comm/Inter/Subj thirds by cumulative image count.

    Partitions are walked in CI-descending order (ties: lower id first). A
    partition stays in the earlier group iff including it leaves the running
    image count strictly closer to that group's cumulative target (1/3 and 2/3
    of all images) than leaving it out.
    """
    if set(ci_scores) != set(partition_image_counts):
        raise DataError("ci_scores and image counts cover different partitions")
    if len(ci_scores) < 3:
        raise DataError(f"need at least 3 partitions to form groups, got {len(ci_scores)}")
    for pid, count in partition_image_counts.items():
        if count < 1:
            raise DataError(f"partition {pid} has image count {count}")

    order = sorted(ci_scores, key=lambda pid: (-ci_scores[pid], pid))
    total = sum(partition_image_counts.values())
    targets = (total / 3.0, 2.0 * total / 3.0)

    group_of: dict[int, str] = {}
    boundaries: list[int] = []
    cumulative = 0
    group_idx = 0
    for pid in order:
        count = partition_image_counts[pid]
        while group_idx < 2:
            target = targets[group_idx]
            if abs(cumulative + count - target) < abs(cumulative - target):
                break
            boundaries.append(cumulative)
            group_idx += 1
        cumulative += count
        group_of[pid] = GROUPS[group_idx]
    while len(boundaries) < 2:
        boundaries.append(cumulative)
    return GroupAssignment(group_of=group_of, boundaries=(boundaries[0], boundaries[1]))


def attribute_table(
    attributes: Mapping[str, tuple[set[str], dict[str, float]]],
    groups: GroupAssignment,
    assignment: Mapping[str, int],
) -> AttributeTable:
    """Per-group label percentages (over labeled images) and numeric quantiles.

    ``assignment`` maps image ids to their final partition. Attribute rows for
    images outside any partition are ignored; every group must keep at least
    one categorically labeled image.
    """
    group_images: dict[str, list[str]] = {g: [] for g in GROUPS}
    for image_id, final in assignment.items():
        group_images[groups.group_of[final]].append(image_id)

    labeled: dict[str, list[str]] = {}
    for g, images in group_images.items():
        labeled[g] = [
            img for img in images if img in attributes and attributes[img][0]
        ]
        if not labeled[g]:
            raise DataError(f"group {g} has no categorically labeled images")

    all_labels: set[str] = set()
    all_numeric: set[str] = set()
    for labels, numeric in attributes.values():
        all_labels |= labels
        all_numeric |= set(numeric)

    percent: dict[str, dict[str, float]] = {}
    for g in GROUPS:
        denom = len(labeled[g])
        tally: Counter = Counter()
        for img in labeled[g]:
            tally.update(attributes[img][0])
        percent[g] = {label: 100.0 * tally[label] / denom for label in all_labels}

    rows = {
        label: (
            percent[GROUP_COMM][label],
            percent[GROUP_INTER][label],
            percent[GROUP_SUBJ][label],
            percent[GROUP_COMM][label] - percent[GROUP_SUBJ][label],
        )
        for label in all_labels
    }
    ordered = dict(
        sorted(rows.items(), key=lambda item: (-item[1][3], item[0]))
    )

    numeric_rows: dict[str, dict[str, tuple[float, float, float] | None]] = {}
    for name in sorted(all_numeric):
        per_group: dict[str, tuple[float, float, float] | None] = {}
        for g in GROUPS:
            values = [
                attributes[img][1][name]
                for img in group_images[g]
                if img in attributes and name in attributes[img][1]
            ]
            if values:
                q25, q50, q75 = np.percentile(values, [25, 50, 75], method="linear")
                per_group[g] = (float(q25), float(q50), float(q75))
            else:
                per_group[g] = None
        numeric_rows[name] = per_group

    return AttributeTable(rows=ordered, numeric_rows=numeric_rows)


def _final_image_counts(model: PartitionModel) -> dict[int, int]:
    counts: Counter = Counter(
        model.leaf_to_final[leaf] for leaf in model.assignment.values()
    )
    return dict(counts)


def groups_for_model(model: PartitionModel) -> GroupAssignment:
    """Tertile grouping of a fitted model's final partitions."""
    return group_partitions(model.ci_scores, _final_image_counts(model))


def assign_external(
    model: PartitionModel, records: Sequence[EmbeddingRecord]
) -> tuple[dict[str, Fraction], dict[str, str]]:
    """Route external embeddings to groups via their nearest leaf centroid.

    Returns (share per group as exact fractions summing to 1, group label per
    image id).
    """
    if not records:
        raise DataError("no external embeddings to assign")
    X = np.stack([r.vector.astype(np.float64) for r in records])
    if X.shape[1] != model.reducer.input_dim:
        raise DataError(
            f"external embeddings have dimension {X.shape[1]}, "
            f"model expects {model.reducer.input_dim}"
        )
    groups = groups_for_model(model)
    reduced = transform(model.reducer, X)
    # Restrict the nearest-centroid search to leaves that actually hold images.
    leaf_ids = sorted(model.leaf_to_final)
    labels = nearest_centroid(model.centroids[leaf_ids], reduced)
    by_image: dict[str, str] = {}
    tally: Counter = Counter({g: 0 for g in GROUPS})
    for record, label in zip(records, labels):
        leaf = leaf_ids[int(label)]
        group = groups.group_of[model.leaf_to_final[leaf]]
        by_image[record.image_id] = group
        tally[group] += 1
    total = len(records)
    shares = {g: Fraction(tally[g], total) for g in GROUPS}
    return shares, by_image


def rank_images(
    model: CiRegressor, records: Sequence[EmbeddingRecord], clamp: bool = False
) -> list[tuple[str, float]]:
    """(image_id, score) pairs sorted by score descending, ties by id ascending."""
    if not records:
        return []
    X = np.stack([r.vector.astype(np.float64) for r in records])
    scores = predict(model, X, clamp=clamp)
    pairs = [(r.image_id, float(s)) for r, s in zip(records, scores)]
    pairs.sort(key=lambda item: (-item[1], item[0]))
    return pairs
