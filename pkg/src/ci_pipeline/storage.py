"""File formats: CIEM embeddings, likes/attributes CSV, model JSON.

CIEM layout (all little-endian):

    magic   4 bytes  "CIEM"
    version u8       currently 1
    dim     u32      vector dimension d
    count   u64      number of records
    record  u16 id byte length, id bytes (UTF-8), d x f32

Writers and readers are bit-exact: reading a written file yields structurally
equal records, and equal models serialize to identical bytes (floats are
emitted as shortest round-trip decimals, maps with sorted keys).
"""
from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError
from .model import (
    CiRegressor,
    EmbeddingRecord,
    LikesIndex,
    MergeEvent,
    PartitionModel,
    PipelineConfig,
)
from .reduction import Reducer

CIEM_MAGIC = b"CIEM"
CIEM_VERSION = 1
_HEADER = struct.Struct("<4sBIQ")
SCHEMA_VERSION = 1


@contextmanager
def _as_stream(target, mode: str):
    if isinstance(target, (str, Path)):
        with open(target, mode) as handle:
            yield handle
    else:
        yield target


def write_embeddings(records: Sequence[EmbeddingRecord], destination, dimension: int | None = None) -> int:
    """Write records as a CIEM stream; returns the number of bytes written.

    ``dimension`` is required for an empty record sequence and must otherwise
    agree with the records.
    """
    records = list(records)
    if records:
        dims = {r.dimension for r in records}
        if len(dims) != 1:
            raise DataError(f"records carry mixed dimensions {sorted(dims)}")
        inferred = dims.pop()
        if dimension is not None and dimension != inferred:
            raise DataError(f"declared dimension {dimension} != record dimension {inferred}")
        dimension = inferred
    elif dimension is None:
        raise DataError("an empty record sequence needs an explicit dimension")
    if dimension < 1:
        raise DataError(f"dimension must be >= 1, got {dimension}")
    seen: set[str] = set()
    for record in records:
        if record.image_id in seen:
            raise DataError(f"duplicate image id {record.image_id!r}")
        seen.add(record.image_id)

    written = 0
    with _as_stream(destination, "wb") as sink:
        written += sink.write(_HEADER.pack(CIEM_MAGIC, CIEM_VERSION, dimension, len(records)))
        for record in records:
            id_bytes = record.image_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise DataError(f"image id too long ({len(id_bytes)} bytes)")
            written += sink.write(struct.pack("<H", len(id_bytes)))
            written += sink.write(id_bytes)
            written += sink.write(record.vector.astype("<f4", copy=False).tobytes())
    return written


def _read_exact(source, n: int, context: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise FormatError(f"truncated stream while reading {context}")
    return data


def read_embeddings(source) -> tuple[int, list[EmbeddingRecord]]:
    """Parse a CIEM stream into (dimension, records in file order)."""
    with _as_stream(source, "rb") as stream:
        header = _read_exact(stream, _HEADER.size, "header")
        magic, version, dimension, count = _HEADER.unpack(header)
        if magic != CIEM_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CIEM_MAGIC!r}")
        if version != CIEM_VERSION:
            raise FormatError(f"unsupported version {version}")
        if dimension == 0:
            raise FormatError("dimension must be positive")
        records: list[EmbeddingRecord] = []
        seen: set[str] = set()
        for index in range(count):
            raw_len = _read_exact(stream, 2, f"record {index} id length")
            (id_len,) = struct.unpack("<H", raw_len)
            if id_len == 0:
                raise FormatError(f"record {index} has an empty id")
            id_bytes = _read_exact(stream, id_len, f"record {index} id")
            try:
                image_id = id_bytes.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"record {index} id is not valid UTF-8") from exc
            vec_bytes = _read_exact(stream, 4 * dimension, f"record {index} vector")
            vector = np.frombuffer(vec_bytes, dtype="<f4")
            if not np.all(np.isfinite(vector)):
                raise FormatError(f"record {index} ({image_id!r}) has non-finite components")
            if image_id in seen:
                raise FormatError(f"record {index} repeats image id {image_id!r}")
            seen.add(image_id)
            records.append(EmbeddingRecord(image_id=image_id, vector=vector))
        if stream.read(1):
            raise FormatError("trailing bytes after the declared record count")
    return int(dimension), records


LIKES_HEADER = "user_id,image_id"


def read_likes(source) -> LikesIndex:
    """Parse a likes CSV (header ``user_id,image_id``) into a LikesIndex."""
    with _as_stream(source, "r") as stream:
        text = stream.read()
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != LIKES_HEADER:
        raise FormatError(f"missing or wrong header, expected {LIKES_HEADER!r}")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.rstrip("\r")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        user, image = parts
        if not user or not image:
            raise FormatError(f"line {lineno}: empty field")
        pairs.append((user, image))
    if not pairs:
        raise FormatError("likes file contains a header but no rows")
    return LikesIndex.from_pairs(pairs)


def write_likes(likes: LikesIndex, destination) -> None:
    """Emit a canonical likes CSV: sorted rows, LF endings.

    The format is unquoted, so ids must not contain commas or line breaks.
    """
    rows = sorted((u, img) for u, images in likes.likes.items() for img in images)
    with _as_stream(destination, "w") as sink:
        sink.write(LIKES_HEADER + "\n")
        for user, image in rows:
            for value in (user, image):
                if "," in value or "\n" in value or "\r" in value:
                    raise DataError(f"id {value!r} cannot be written to unquoted CSV")
            sink.write(f"{user},{image}\n")


ATTRS_HEADER = "image_id,attribute,value"


def read_attributes(source) -> dict[str, tuple[set[str], dict[str, float]]]:
    """Parse an attributes CSV into image_id -> (labels, numeric scores).

    A row with an empty value records categorical presence; a decimal value
    records a numeric attribute. Image ids unknown to any model are kept and
    filtered later at join time.
    """
    with _as_stream(source, "r") as stream:
        text = stream.read()
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != ATTRS_HEADER:
        raise FormatError(f"missing or wrong header, expected {ATTRS_HEADER!r}")
    out: dict[str, tuple[set[str], dict[str, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.rstrip("\r")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        image_id, attribute, value = parts
        if not image_id or not attribute:
            raise FormatError(f"line {lineno}: empty image_id or attribute")
        labels, numeric = out.setdefault(image_id, (set(), {}))
        if value == "":
            labels.add(attribute)
        else:
            try:
                numeric[attribute] = float(value)
            except ValueError as exc:
                raise FormatError(
                    f"line {lineno}: malformed numeric value {value!r} for {attribute!r}"
                ) from exc
            if not np.isfinite(numeric[attribute]):
                raise FormatError(f"line {lineno}: non-finite value for {attribute!r}")
    return out


def _floats(array) -> list:
    return [float(x) for x in np.asarray(array).ravel()]


def _matrix(array) -> list[list[float]]:
    return [[float(x) for x in row] for row in np.asarray(array)]


def _reducer_to_json(reducer: Reducer) -> dict:
    return {
        "kind": reducer.kind,
        "mean": _floats(reducer.mean),
        "components": None if reducer.components is None else _matrix(reducer.components),
        "input_dim": reducer.input_dim,
        "output_dim": reducer.output_dim,
    }


def _reducer_from_json(doc: dict) -> Reducer:
    components = doc["components"]
    return Reducer(
        kind=doc["kind"],
        mean=np.asarray(doc["mean"], dtype=np.float64),
        components=None if components is None else np.asarray(components, dtype=np.float64),
        input_dim=int(doc["input_dim"]),
        output_dim=int(doc["output_dim"]),
    )


def _model_to_json(model) -> dict:
    if isinstance(model, PartitionModel):
        cfg = model.config
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "partition_model",
            "config": {
                "n_partitions": cfg.n_partitions,
                "theta_image": cfg.theta_image,
                "theta_ci": cfg.theta_ci,
                "reduced_dim": cfg.reduced_dim,
                "min_likes": cfg.min_likes,
                "seed": cfg.seed,
                "kmeans_max_iters": cfg.kmeans_max_iters,
                "kmeans_tol": cfg.kmeans_tol,
            },
            "reducer": _reducer_to_json(model.reducer),
            "centroids": _matrix(model.centroids),
            "assignment": {img: int(leaf) for img, leaf in model.assignment.items()},
            "merge_log": [
                {
                    "left_id": e.left_id,
                    "right_id": e.right_id,
                    "new_id": e.new_id,
                    "ward_distance": float(e.ward_distance),
                    "user_iou": float(e.user_iou),
                }
                for e in model.merge_log
            ],
            "leaf_to_final": {str(k): int(v) for k, v in model.leaf_to_final.items()},
            "ci_scores": {str(k): float(v) for k, v in model.ci_scores.items()},
        }
    if isinstance(model, CiRegressor):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "ci_regressor",
            "weights": _floats(model.weights),
            "bias": float(model.bias),
            "ridge_lambda": float(model.ridge_lambda),
            "target_min": float(model.target_min),
            "target_max": float(model.target_max),
        }
    raise DataError(f"cannot serialize object of type {type(model).__name__}")


def save_model(model, path) -> None:
    """Serialize a PartitionModel or CiRegressor to canonical JSON."""
    doc = _model_to_json(model)
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    with _as_stream(path, "w") as sink:
        sink.write(payload)


def load_model(path) -> PartitionModel | CiRegressor:
    """Load a model JSON, re-validating every type invariant."""
    with _as_stream(path, "r") as stream:
        try:
            doc = json.load(stream)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {version!r}")
    kind = doc.get("kind")
    try:
        if kind == "partition_model":
            cfg = PipelineConfig(**doc["config"])
            merge_log = tuple(
                MergeEvent(
                    left_id=int(e["left_id"]),
                    right_id=int(e["right_id"]),
                    new_id=int(e["new_id"]),
                    ward_distance=float(e["ward_distance"]),
                    user_iou=float(e["user_iou"]),
                )
                for e in doc["merge_log"]
            )
            return PartitionModel(
                config=cfg,
                reducer=_reducer_from_json(doc["reducer"]),
                centroids=np.asarray(doc["centroids"], dtype=np.float64),
                assignment={img: int(leaf) for img, leaf in doc["assignment"].items()},
                merge_log=merge_log,
                leaf_to_final={int(k): int(v) for k, v in doc["leaf_to_final"].items()},
                ci_scores={int(k): float(v) for k, v in doc["ci_scores"].items()},
            )
        if kind == "ci_regressor":
            return CiRegressor(
                weights=np.asarray(doc["weights"], dtype=np.float64),
                bias=float(doc["bias"]),
                ridge_lambda=float(doc["ridge_lambda"]),
                target_min=float(doc["target_min"]),
                target_max=float(doc["target_max"]),
            )
    except KeyError as exc:
        raise FormatError(f"model document missing field {exc}") from exc
    raise FormatError(f"unknown model kind {kind!r}")
