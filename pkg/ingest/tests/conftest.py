"""Fixtures for the ingest suite: a synthetic 20-image corpus on disk."""

import json
from pathlib import Path

import pytest
from PIL import Image

FIXTURES = Path(__file__).parent / "fixtures"

# pass/fail verdict lines echoed after the run (same convention as the
# core package's release gate)
VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)


_PALETTE = [
    ("red", (220, 30, 30)), ("blue", (30, 30, 220)), ("green", (30, 200, 30)),
    ("yellow", (230, 230, 40)), ("orange", (240, 150, 30)),
    ("purple", (130, 40, 150)), ("pink", (250, 180, 200)),
    ("brown", (140, 90, 50)), ("white", (245, 245, 245)),
    ("black", (15, 15, 15)),
]
_SHAPES = ["square", "block", "circle", "box"]
_SURFACES = ["table", "floor", "wall", "shelf"]


@pytest.fixture(scope="session")
def sample_corpus(tmp_path_factory):
    """20 solid-color images plus MSCOCO-style annotations.

    Splits exercise the full Karpathy tag set: restval collapses into
    train, val into test.
    """
    root = tmp_path_factory.mktemp("corpus")
    imgdir = root / "images"
    imgdir.mkdir()
    images, annotations = [], []
    tags = ["train"] * 10 + ["restval"] * 2 + ["val"] * 2 + ["test"] * 6
    for i in range(20):
        color, rgb = _PALETTE[i % len(_PALETTE)]
        shape = _SHAPES[i % len(_SHAPES)]
        surface = _SURFACES[i % len(_SURFACES)]
        file_name = f"{i:04d}.png"
        Image.new("RGB", (32, 32), rgb).save(imgdir / file_name)
        images.append({"id": i + 1, "file_name": file_name, "split": tags[i]})
        annotations.append(
            {"image_id": i + 1, "caption": f"a {color} {shape} on a {surface}"}
        )
        annotations.append(
            {
                "image_id": i + 1,
                "caption": f"a large {color} {shape} sitting on a wooden {surface}",
            }
        )
    ann = root / "annotations.json"
    ann.write_text(json.dumps({"images": images, "annotations": annotations}))
    return {"annotations": ann, "images": imgdir, "root": root}
