import numpy as np
import pytest
from PIL import Image

from hmln_ingest import (
    IngestError,
    available_backends,
    cosine,
    get_backend,
    render_predicate,
)


@pytest.fixture(scope="module")
def backend():
    return get_backend("color-sketch/v1")


def test_backend_registry():
    assert "color-sketch/v1" in available_backends()
    with pytest.raises(IngestError, match="color-sketch/v1"):
        get_backend("clip-vit-b32")


def test_render_template_single_spaces():
    assert render_predicate("man", "riding", "horse") == "man riding horse"
    assert render_predicate("dog", "sitting on", "grass") == "dog sitting on grass"
    # empty object (unary) drops cleanly rather than leaving a dangling space
    assert render_predicate("sky", "is blue", "") == "sky is blue"


def test_text_self_similarity_is_one(backend):
    v = backend.embed_text("square is red")
    w = backend.embed_text("square is red")
    assert np.array_equal(v, w)
    assert cosine(v, w) == pytest.approx(1.0, abs=1e-12)


def test_embed_text_rejects_empty(backend):
    with pytest.raises(IngestError):
        backend.embed_text("   ")


def test_cosine_bounds_on_arbitrary_text(backend):
    words = ["man", "riding", "horse", "red", "blue", "xylophone", "qwerty"]
    vecs = [backend.embed_text(w) for w in words]
    for u in vecs:
        for v in vecs:
            assert -1.0 <= cosine(u, v) <= 1.0


def test_cosine_zero_vector_guard():
    assert cosine(np.zeros(4), np.ones(4)) == 0.0


def test_image_embedding_is_deterministic(backend, tmp_path):
    path = tmp_path / "img.png"
    Image.new("RGB", (16, 16), (200, 40, 40)).save(path)
    assert np.array_equal(backend.embed_image(path), backend.embed_image(path))


def test_unreadable_image_aborts_with_path(backend, tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("not pixels")
    with pytest.raises(IngestError, match="notes.txt"):
        backend.embed_image(path)
    with pytest.raises(IngestError, match="missing.png"):
        backend.embed_image(tmp_path / "missing.png")


def test_on_image_predicate_ranks_highest(backend, tmp_path):
    """Solid-color images prefer the caption naming their own color."""
    colors = {"red": (220, 30, 30), "blue": (30, 30, 220), "green": (30, 200, 30)}
    for name, rgb in colors.items():
        path = tmp_path / f"{name}.png"
        Image.new("RGB", (24, 24), rgb).save(path)
        image_vec = backend.embed_image(path)
        scores = {
            cand: cosine(
                image_vec, backend.embed_text(render_predicate("square", "is", cand))
            )
            for cand in colors
        }
        assert max(scores, key=scores.get) == name, scores


def test_image_text_scores_are_valid_g(backend, tmp_path):
    rng = np.random.default_rng(8)
    path = tmp_path / "noise.png"
    Image.fromarray(
        rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8), "RGB"
    ).save(path)
    image_vec = backend.embed_image(path)
    for text in ("man riding horse", "square is red", "wall"):
        g = cosine(image_vec, backend.embed_text(text))
        assert -1.0 <= g <= 1.0
