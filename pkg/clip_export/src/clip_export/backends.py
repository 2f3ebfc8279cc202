"""Embedding backends. Each maps a list of RGB images to (M, EMBED_DIM) float32.

Backends return raw embeddings; unit normalization happens once, in the
export pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .errors import MissingWeightsError

EMBED_DIM = 512  # ViT-B/32 projection width; every backend matches it

BACKEND_NAMES = ("clip", "hash")


class PretrainedClipBackend:
    """Frozen CLIP ViT-B/32 image tower with its projection head."""

    name = "clip"
    DEFAULT_WEIGHTS = "openai/clip-vit-base-patch32"

    def __init__(self, weights: str | None = None):
        # torch and transformers load here, not at module import, so the
        # offline backend works without either installed.
        try:
            import torch
            from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection
        except ImportError as e:
            raise MissingWeightsError(
                f"the clip backend needs torch and transformers installed: {e}"
            ) from e
        source = weights or self.DEFAULT_WEIGHTS
        # An explicit path must resolve on disk; only the default id may
        # consult the hub cache.
        local_only = weights is not None
        try:
            self._processor = CLIPImageProcessor.from_pretrained(
                source, local_files_only=local_only
            )
            self._model = CLIPVisionModelWithProjection.from_pretrained(
                source, local_files_only=local_only
            )
        except Exception as e:  # any load failure is a weights problem to the caller
            raise MissingWeightsError(
                f"pretrained weights not found at {source!r}; pass --weights with a "
                f"local checkpoint directory or pre-populate the cache ({e})"
            ) from e
        self._model.eval()
        self._torch = torch

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(images=images, return_tensors="pt")
        with torch.no_grad():
            out = self._model(**inputs)
        return out.image_embeds.to(torch.float32).cpu().numpy()


class HashProjectionBackend:
    """Deterministic offline stand-in: hash pixel content into EMBED_DIM floats.

    Carries no learned weights and no notion of similarity. It exists so the
    export path, the sampling logic, and the file format can run and be
    tested where pretrained weights are unavailable.
    """

    name = "hash"

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), EMBED_DIM), dtype=np.float32)
        for i, img in enumerate(images):
            rows[i] = self._embed_one(img)
        return rows

    @staticmethod
    def _embed_one(img: Image.Image) -> np.ndarray:
        # Fixed-size canonical pixel view: the embedding depends on content,
        # not on the source file's encoding or resolution.
        canon = img.convert("RGB").resize((64, 64), Image.BILINEAR).tobytes()
        digest = hashlib.shake_256(b"clip-export:v1:" + canon).digest(EMBED_DIM * 4)
        vals = np.frombuffer(digest, dtype="<u4").astype(np.float64)
        return (vals / 2.0**32 - 0.5).astype(np.float32)


def make_backend(name: str, weights: str | None = None):
    if name == "clip":
        return PretrainedClipBackend(weights)
    if name == "hash":
        if weights is not None:
            raise ValueError("the hash backend takes no weights")
        return HashProjectionBackend()
    raise ValueError(f"unknown backend {name!r}, expected one of: {', '.join(BACKEND_NAMES)}")
