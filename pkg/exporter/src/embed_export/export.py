"""Walk an image directory, embed every decodable file, write CIEM + manifest."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .ciem import write_ciem
from .models import load_model

log = logging.getLogger("embed_export")


class ExportError(Exception):
    pass


def _iter_files(image_dir: Path) -> list[Path]:
    return sorted(
        (p for p in image_dir.rglob("*") if p.is_file()),
        key=lambda p: p.relative_to(image_dir).as_posix(),
    )


def export(
    image_dir,
    output_path,
    model_name: str = "pixel-stats",
    batch_size: int = 32,
    manifest_path=None,
) -> int:
    """Embed every image under ``image_dir`` into a CIEM file.

    Image ids are paths relative to ``image_dir`` (posix separators), emitted
    in lexicographic order. Files that fail to decode are skipped with a
    warning. Returns the number of records written; raises ExportError when
    nothing could be embedded.
    """
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise ExportError(f"{image_dir} is not a directory")
    if batch_size < 1:
        raise ExportError(f"batch_size must be >= 1, got {batch_size}")
    model = load_model(model_name)

    ids: list[str] = []
    sources: list[Path] = []
    images: list[Image.Image] = []
    skipped = 0
    for path in _iter_files(image_dir):
        try:
            with Image.open(path) as handle:
                handle.load()
                image = handle.convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            skipped += 1
            log.warning("skipping undecodable file %s: %s", path, exc)
            continue
        ids.append(path.relative_to(image_dir).as_posix())
        sources.append(path)
        images.append(image)
    if not ids:
        raise ExportError(
            f"no decodable images under {image_dir} ({skipped} files skipped)"
        )

    chunks = [
        model.embed_batch(images[start : start + batch_size])
        for start in range(0, len(images), batch_size)
    ]
    vectors = np.vstack(chunks)
    write_ciem(output_path, ids, vectors)

    if manifest_path is not None:
        with open(manifest_path, "w") as sink:
            sink.write("image_id,source_path\n")
            for image_id, source in zip(ids, sources):
                sink.write(f"{image_id},{source}\n")

    log.info(
        "exported %d records (dim %d, model %s), skipped %d",
        len(ids), model.dimension, model.name, skipped,
    )
    return len(ids)
