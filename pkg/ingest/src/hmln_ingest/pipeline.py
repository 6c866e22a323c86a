"""End-to-end ingest: annotations + images in, interchange files out.

The emitted JSONL mirrors the core loader's canonical rendering (same
key order, same ``.9g`` float format) so a load/re-save through the core
is byte-stable. Validation happens before any file is written.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from hmln_ingest.embed import IngestError, cosine, get_backend, render_predicate
from hmln_ingest.parse import PARSER_VERSION, ParseError, extract_predicates

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# how Karpathy-style split tags collapse onto the core's two splits
_SPLIT_MAP = {"train": "train", "restval": "train", "val": "test", "test": "test"}


@dataclass(frozen=True)
class RawInstance:
    image_id: str
    path: Path
    captions: tuple[str, ...]
    split: str

    def __post_init__(self) -> None:
        if not self.image_id:
            raise IngestError("image_id must be non-empty")
        if not self.captions:
            raise IngestError(f"{self.image_id}: needs at least one caption")
        if self.split not in ("train", "test"):
            raise IngestError(f"{self.image_id}: bad split {self.split!r}")


def read_annotations(annotations_path, images_root):
    """Load an MSCOCO-style annotation file into RawInstances.

    Expected shape: ``{"images": [{"id", "file_name", "split"}],
    "annotations": [{"image_id", "caption"}]}``. Split tags follow the
    captioning convention (train/restval/val/test) and collapse to the
    core's train/test.
    """
    with open(annotations_path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{annotations_path}: malformed JSON: {exc}") from exc
    if not isinstance(obj, dict) or "images" not in obj or "annotations" not in obj:
        raise IngestError(f"{annotations_path}: expected images + annotations keys")
    captions = {}
    for ann in obj["annotations"]:
        captions.setdefault(ann["image_id"], []).append(str(ann["caption"]))
    root = Path(images_root)
    instances = []
    for img in sorted(obj["images"], key=lambda m: m["id"]):
        split = _SPLIT_MAP.get(str(img.get("split", "train")))
        if split is None:
            raise IngestError(f"image {img['id']}: unknown split {img.get('split')!r}")
        if img["id"] not in captions:
            raise IngestError(f"image {img['id']}: no captions")
        instances.append(
            RawInstance(
                image_id=f"img{int(img['id']):06d}",
                path=root / img["file_name"],
                captions=tuple(captions[img["id"]]),
                split=split,
            )
        )
    return instances


def build_records(instances, backend):
    """Parse, embed and score every instance into a dataset record dict.

    A caption the parser cannot use (or an instance yielding no triplets
    at all) skips the whole instance with a log entry, matching the
    offline-batch posture: bad data is dropped loudly, not fatal.
    """
    records = []
    skipped = []
    for inst in instances:
        triplets = []
        try:
            for caption in inst.captions:
                for t in extract_predicates(caption):
                    if t not in triplets:
                        triplets.append(t)
        except ParseError as exc:
            log.warning("%s: skipped (parse failure: %s)", inst.image_id, exc)
            skipped.append(inst.image_id)
            continue
        if not triplets:
            log.warning("%s: skipped (no extractable predicates)", inst.image_id)
            skipped.append(inst.image_id)
            continue
        image_vec = backend.embed_image(inst.path)
        predicates = [
            {
                "subject": s,
                "relation": r,
                "object": o,
                "g": cosine(image_vec, backend.embed_text(render_predicate(s, r, o))),
            }
            for s, r, o in triplets
        ]
        record = {
            "schema_version": SCHEMA_VERSION,
            "instance_id": inst.image_id,
            "split": inst.split,
            "predicates": predicates,
        }
        if inst.split == "test":
            sims = [cosine(image_vec, backend.embed_text(c)) for c in inst.captions]
            record["avg_caption_similarity"] = sum(sims) / len(sims)
        record["caption_text"] = " | ".join(inst.captions)
        records.append(record)
    return records, skipped


def build_token_table(records, backend):
    """Cosine similarity for every pair of subject/object tokens seen.

    Relations are excluded: the core's predicate matcher never compares
    them. Raw cosines may be negative, so scores clamp into [0, 1].
    """
    vocab = set()
    for rec in records:
        for pred in rec["predicates"]:
            vocab.add(pred["subject"])
            if pred["object"]:
                vocab.add(pred["object"])
    vectors = {tok: backend.embed_text(tok) for tok in sorted(vocab)}
    table = []
    for a, b in itertools.combinations(sorted(vocab), 2):
        score = min(1.0, max(0.0, cosine(vectors[a], vectors[b])))
        table.append((a, b, score))
    return table


def validate_records(records):
    """Check the interchange contract before anything touches disk."""
    seen_ids = set()
    for rec in records:
        rid = rec.get("instance_id")
        if not rid or not isinstance(rid, str):
            raise IngestError(f"bad instance_id: {rid!r}")
        if rid in seen_ids:
            raise IngestError(f"duplicate instance_id {rid!r}")
        seen_ids.add(rid)
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise IngestError(f"{rid}: bad schema_version")
        if rec.get("split") not in ("train", "test"):
            raise IngestError(f"{rid}: bad split")
        preds = rec.get("predicates")
        if not isinstance(preds, list) or not preds:
            raise IngestError(f"{rid}: needs at least one predicate")
        keys = set()
        for pred in preds:
            if not pred.get("subject") or not pred.get("relation"):
                raise IngestError(f"{rid}: predicate needs subject and relation")
            g = pred.get("g")
            if isinstance(g, bool) or not isinstance(g, (int, float)):
                raise IngestError(f"{rid}: g must be a number")
            if not math.isfinite(g) or not (-1.0 <= g <= 1.0):
                raise IngestError(f"{rid}: g out of [-1, 1]: {g!r}")
            key = (pred["subject"], pred["relation"], pred["object"])
            if key in keys:
                raise IngestError(f"{rid}: duplicate predicate {key}")
            keys.add(key)
        avg = rec.get("avg_caption_similarity")
        if avg is not None and not (-1.0 <= avg <= 1.0):
            raise IngestError(f"{rid}: avg_caption_similarity out of [-1, 1]")


# --- canonical rendering (mirrors the core loader's fixed format) ----------

def _render(value):
    if isinstance(value, bool):
        raise IngestError("booleans have no canonical form here")
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise IngestError("non-finite number in output")
        if value == 0.0:
            return "0"
        return format(value, ".9g")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ",".join(_render(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(
            f"{json.dumps(k)}:{_render(v)}" for k, v in value.items()
        ) + "}"
    raise IngestError(f"cannot render {type(value).__name__}")


def _ordered(rec):
    out = {
        "schema_version": rec["schema_version"],
        "instance_id": rec["instance_id"],
        "split": rec["split"],
        "predicates": [
            {k: p[k] for k in ("subject", "relation", "object", "g")}
            for p in rec["predicates"]
        ],
    }
    if "avg_caption_similarity" in rec:
        out["avg_caption_similarity"] = rec["avg_caption_similarity"]
    if "caption_text" in rec:
        out["caption_text"] = rec["caption_text"]
    return out


def write_dataset(records, path):
    lines = [_render(_ordered(rec)) for rec in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_similarity(table, path, provenance_lines=()):
    lines = [f"# {note}" for note in provenance_lines]
    lines.append("# token_a\ttoken_b\tscore")
    for a, b, score in table:
        lines.append(f"{a}\t{b}\t{format(score, '.9g')}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_provenance(info, path):
    Path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def run_pipeline(annotations_path, images_root, out_dir,
                 backend_name="color-sketch/v1", seed=0):
    """Produce dataset.jsonl, similarity.tsv and provenance.json.

    Returns a summary dict (also persisted as the provenance file). The
    seed is recorded for forward compatibility even though the shipped
    backend is deterministic by construction.
    """
    backend = get_backend(backend_name)
    instances = read_annotations(annotations_path, images_root)
    records, skipped = build_records(instances, backend)
    if not records:
        raise IngestError("no usable instances; nothing to write")
    validate_records(records)
    table = build_token_table(records, backend)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = {
        "schema_version": SCHEMA_VERSION,
        "backend": backend.name,
        "parser": PARSER_VERSION,
        "predicate_template": "<subject> <relation> <object>",
        "seed": seed,
        "images": len(records),
        "skipped": skipped,
    }
    notes = (f"backend: {backend.name}", f"parser: {PARSER_VERSION}")
    write_dataset(records, out / "dataset.jsonl")
    write_similarity(table, out / "similarity.tsv", notes)
    write_provenance(provenance, out / "provenance.json")
    return provenance
