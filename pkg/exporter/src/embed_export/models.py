"""Embedding backends.

``pixel-stats`` is the dependency-light default: images are resized to 16x16
RGB and the normalized pixels flattened into a 768-component vector. It is
deterministic and needs no weights, which keeps the exporter usable offline.

``clip:<model>`` loads a CLIP checkpoint through sentence-transformers (for
example ``clip:clip-ViT-L-14``) and emits its pooled image features.
"""
from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
from PIL import Image


class EmbeddingModel(Protocol):
    name: str
    dimension: int

    def embed_batch(self, images: Sequence[Image.Image]) -> np.ndarray: ...


class PixelStatsModel:
    """16x16 RGB thumbnail, scaled to [0, 1] and flattened (768 components)."""

    name = "pixel-stats"
    side = 16

    @property
    def dimension(self) -> int:
        return self.side * self.side * 3

    def embed_batch(self, images: Sequence[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), self.dimension), dtype=np.float32)
        for i, image in enumerate(images):
            thumb = image.convert("RGB").resize((self.side, self.side), Image.BILINEAR)
            out[i] = np.asarray(thumb, dtype=np.float32).reshape(-1) / 255.0
        return out


class ClipModel:
    """CLIP image tower via sentence-transformers; requires local weights."""

    def __init__(self, checkpoint: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise RuntimeError(
                "the clip backend needs the sentence-transformers package "
                "(pip install embed-export[clip])"
            ) from exc
        try:
            self._model = SentenceTransformer(checkpoint)
        except Exception as exc:
            raise RuntimeError(
                f"could not load CLIP checkpoint {checkpoint!r}; "
                "weights must be available locally or downloadable"
            ) from exc
        self.name = f"clip:{checkpoint}"
        probe = self._model.encode([Image.new("RGB", (32, 32))], convert_to_numpy=True)
        self.dimension = int(probe.shape[1])

    def embed_batch(self, images: Sequence[Image.Image]) -> np.ndarray:
        converted = [image.convert("RGB") for image in images]
        return self._model.encode(converted, convert_to_numpy=True).astype(np.float32)


def load_model(name: str) -> EmbeddingModel:
    if name == "pixel-stats":
        return PixelStatsModel()
    if name.startswith("clip:"):
        return ClipModel(name.split(":", 1)[1])
    raise ValueError(
        f"unknown model {name!r}; expected 'pixel-stats' or 'clip:<checkpoint>'"
    )
