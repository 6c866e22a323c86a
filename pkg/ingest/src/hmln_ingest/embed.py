"""Embedding backends scoring image/text and token/token similarity.

Backends are pluggable so a heavyweight multimodal encoder can be wired
in later; the shipped default is ``color-sketch/v1``, a deterministic
joint space good enough for desk-scale fixtures: images embed as pixel
color statistics, text embeds color vocabulary onto the same axes and
hashes every other token onto dimensions images never touch. Alignment
is therefore real (a red image genuinely prefers "red" captions) while
needing no model download.
"""

import hashlib
from typing import Protocol

import numpy as np
from PIL import Image, UnidentifiedImageError

PREDICATE_TEMPLATE = "{subject} {relation} {object}"


class IngestError(Exception):
    """Pipeline-level failure with an actionable message."""


def render_predicate(subject, relation, obj):
    """Pure text rendering of a triplet; single spaces, empty object dropped."""
    text = PREDICATE_TEMPLATE.format(subject=subject, relation=relation, object=obj)
    return " ".join(text.split())


def cosine(u, v):
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class EmbeddingBackend(Protocol):
    name: str

    def embed_image(self, path) -> np.ndarray: ...

    def embed_text(self, text) -> np.ndarray: ...


class ColorSketchBackend:
    """Joint image/text space built from color statistics.

    Dimensions 0-2 carry centered mean RGB, dimension 3 is a constant
    bias shared by both modalities, and the remaining dimensions hold
    per-token hashed directions that only text occupies. Everything is a
    pure function of the input bytes, so re-runs reproduce identical
    vectors.
    """

    name = "color-sketch/v1"

    _DIM = 64
    _BIAS = 0.25

    _COLOR_WORDS = {
        "red": (1.0, 0.0, 0.0),
        "green": (0.0, 1.0, 0.0),
        "blue": (0.0, 0.0, 1.0),
        "yellow": (1.0, 1.0, 0.0),
        "cyan": (0.0, 1.0, 1.0),
        "magenta": (1.0, 0.0, 1.0),
        "orange": (1.0, 0.5, 0.0),
        "purple": (0.5, 0.0, 0.5),
        "pink": (1.0, 0.75, 0.8),
        "brown": (0.6, 0.4, 0.2),
        "white": (1.0, 1.0, 1.0),
        "black": (0.0, 0.0, 0.0),
        "gray": (0.5, 0.5, 0.5),
        "grey": (0.5, 0.5, 0.5),
    }

    def embed_image(self, path):
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=float) / 255.0
        except (OSError, UnidentifiedImageError) as exc:
            raise IngestError(f"cannot decode image {path}: {exc}") from exc
        vec = np.zeros(self._DIM)
        vec[0:3] = pixels.reshape(-1, 3).mean(axis=0) - 0.5
        vec[3] = self._BIAS
        return vec

    def embed_text(self, text):
        tokens = text.lower().split()
        if not tokens:
            raise IngestError("cannot embed empty text")
        vec = np.zeros(self._DIM)
        vec[3] = self._BIAS
        for tok in tokens:
            rgb = self._COLOR_WORDS.get(tok)
            if rgb is not None:
                vec[0:3] += np.asarray(rgb) - 0.5
            else:
                vec[4:] += self._token_direction(tok)
        return vec

    def _token_direction(self, token):
        seed = int.from_bytes(
            hashlib.blake2b(token.encode(), digest_size=8).digest(), "big"
        )
        rng = np.random.Generator(np.random.Philox(seed))
        d = rng.standard_normal(self._DIM - 4)
        return d / np.linalg.norm(d)


_BACKENDS = {ColorSketchBackend.name: ColorSketchBackend}


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    cls = _BACKENDS.get(name)
    if cls is None:
        raise IngestError(
            f"embedding backend {name!r} is not available; "
            f"choose one of: {', '.join(available_backends())}"
        )
    return cls()
