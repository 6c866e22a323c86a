"""Interchange formats and persistence.

Datasets travel as JSON lines (one record per caption), token
similarities as a three-column TSV, and models/reports as JSON with a
fixed key order. Every float is rendered with 9 significant digits via
one canonical writer, so identical inputs and seeds give byte-identical
output files on any platform.

Atom identity is the lowercased "subject|relation|object" rendering of
the triplet: the same predicate extracted from two captions names the
same atom, which is what lets learned weights transfer to test-time
slices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .learning import TrainingInstance
from .backtrace import TraceExample
from .model import (
    DEFAULT_EPSILON,
    FeaturePair,
    GroundPredicate,
    HmlnModel,
    ground_templates,
    model_from_instances,
    with_real_terms,
)
from .similarity import SimilarityTable

__all__ = [
    "SCHEMA_VERSION",
    "DatasetRecord",
    "canonical_atom_id",
    "canonical_json",
    "load_dataset",
    "parse_dataset",
    "dumps_dataset",
    "save_dataset",
    "load_similarity",
    "save_similarity",
    "build_model",
    "augment_model",
    "training_instances",
    "trace_examples",
    "save_model",
    "dumps_model",
    "load_model",
    "parse_model",
]

SCHEMA_VERSION = 1


def canonical_atom_id(subject: str, relation: str, obj: str = "") -> str:
    return f"{subject}|{relation}|{obj}".lower()


def _render(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValidationError(f"cannot serialize non-finite number {value!r}")
        if value == 0.0:
            return "0"  # fold -0.0 into 0 so reload/re-save is stable
        return format(value, ".9g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_render(v) for v in value) + "]"
    if isinstance(value, Mapping):
        return "{" + ",".join(
            f"{json.dumps(str(k))}:{_render(v)}" for k, v in value.items()
        ) + "}"
    raise ValidationError(f"cannot serialize {type(value).__name__}")


def canonical_json(value) -> str:
    """JSON with insertion-ordered keys and 9-significant-digit floats."""
    return _render(value)


@dataclass(frozen=True)
class DatasetRecord:
    """One caption's worth of predicates, tagged with its split.

    ``avg_caption_similarity`` is the mean image-caption cosine used for
    the report axis; it is optional because only test records need it.
    """

    instance_id: str
    split: str
    predicates: tuple[GroundPredicate, ...]
    avg_caption_similarity: float | None = None
    caption_text: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ValidationError(
                f"unrecognized schema_version {self.schema_version!r}"
            )
        if not self.instance_id:
            raise ValidationError("instance_id must be non-empty")
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be train or test, got {self.split!r}")
        seen = set()
        for p in self.predicates:
            if p.id in seen:
                raise ValidationError(f"duplicate predicate {p.id!r} in record")
            seen.add(p.id)
        avg = self.avg_caption_similarity
        if avg is not None and (not math.isfinite(avg) or not (-1.0 <= avg <= 1.0)):
            raise ValidationError(f"avg_caption_similarity out of [-1, 1]: {avg!r}")


def _record_from_obj(obj) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record must be a JSON object")
    preds = []
    raw_preds = obj.get("predicates")
    if not isinstance(raw_preds, list):
        raise ValidationError("predicates must be a list")
    for i, rp in enumerate(raw_preds):
        if not isinstance(rp, dict):
            raise ValidationError(f"predicates[{i}] must be an object")
        subject = rp.get("subject", "")
        relation = rp.get("relation", "")
        o = rp.get("object", "")
        g = rp.get("g")
        if not isinstance(g, (int, float)) or isinstance(g, bool):
            raise ValidationError(f"predicates[{i}].g must be a number")
        preds.append(GroundPredicate(
            id=canonical_atom_id(str(subject), str(relation), str(o)),
            subject=str(subject),
            relation=str(relation),
            object=str(o),
            g=float(g),
        ))
    avg = obj.get("avg_caption_similarity")
    if avg is not None and (not isinstance(avg, (int, float)) or isinstance(avg, bool)):
        raise ValidationError("avg_caption_similarity must be a number")
    caption = obj.get("caption_text")
    if caption is not None and not isinstance(caption, str):
        raise ValidationError("caption_text must be a string")
    return DatasetRecord(
        instance_id=str(obj.get("instance_id", "")),
        split=str(obj.get("split", "")),
        predicates=tuple(preds),
        avg_caption_similarity=None if avg is None else float(avg),
        caption_text=caption,
        schema_version=obj.get("schema_version", 0),
    )


def parse_dataset(text: str, source: str = "<string>") -> list[DatasetRecord]:
    records = []
    seen_ids = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{source}:{ln}: malformed JSON: {e.msg}") from None
        try:
            rec = _record_from_obj(obj)
        except ValidationError as e:
            raise ValidationError(f"{source}:{ln}: {e}") from None
        if rec.instance_id in seen_ids:
            raise ValidationError(
                f"{source}:{ln}: duplicate instance_id {rec.instance_id!r}"
            )
        seen_ids.add(rec.instance_id)
        records.append(rec)
    return records


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    path = Path(path)
    return parse_dataset(path.read_text(), source=str(path))


def _record_obj(rec: DatasetRecord) -> dict:
    out: dict = {
        "schema_version": rec.schema_version,
        "instance_id": rec.instance_id,
        "split": rec.split,
        "predicates": [
            {"subject": p.subject, "relation": p.relation,
             "object": p.object, "g": p.g}
            for p in rec.predicates
        ],
    }
    if rec.avg_caption_similarity is not None:
        out["avg_caption_similarity"] = rec.avg_caption_similarity
    if rec.caption_text is not None:
        out["caption_text"] = rec.caption_text
    return out


def dumps_dataset(records: Iterable[DatasetRecord]) -> str:
    return "".join(canonical_json(_record_obj(r)) + "\n" for r in records)


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(records))


def load_similarity(path: str | Path) -> SimilarityTable:
    path = Path(path)
    try:
        return SimilarityTable.from_tsv(path.read_text())
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def save_similarity(table: SimilarityTable, path: str | Path) -> None:
    Path(path).write_text(table.to_tsv())


def build_model(records: Sequence[DatasetRecord],
                epsilon: float = DEFAULT_EPSILON) -> HmlnModel:
    """Pool records into one grounded, zero-weight model.

    The same triplet appearing in several records is one atom; its
    stored g comes from the lowest instance_id that mentions it (learned
    models carry per-instance g through real terms anyway, so the stored
    value is only a fallback).
    """
    resolved: dict[str, GroundPredicate] = {}
    for r in sorted(records, key=lambda r: r.instance_id):
        for p in r.predicates:
            resolved.setdefault(p.id, p)
    instances = [
        (r.instance_id, [resolved[p.id] for p in r.predicates]) for r in records
    ]
    return model_from_instances(instances, epsilon)


def augment_model(model: HmlnModel, records: Sequence[DatasetRecord]) -> HmlnModel:
    """Extend a model with a test instance's atoms and re-anchor its g.

    Missing atoms are added; template pairs grounded within each record
    that the model lacks come in at weight 0 (no training signal for
    them). Every atom mentioned by the records gets its g replaced by
    the record value, so all potentials are recomputed against the test
    image. Used to build the query slice scored by MAP and backtrace.
    """
    terms: dict[str, float] = {}
    content: dict[str, GroundPredicate] = dict(model.atoms)
    for r in records:
        for p in r.predicates:
            terms.setdefault(p.id, p.g)
            content.setdefault(p.id, p)
    existing = {frozenset(f.atoms) for f in model.features}
    instances = [
        (r.instance_id, [content[p.id] for p in r.predicates]) for r in records
    ]
    next_id = max((f.id for f in model.features), default=-1) + 1
    new_pairs = []
    for pair in ground_templates(instances, model.epsilon):
        if frozenset(pair.atoms) in existing:
            continue
        new_pairs.append(FeaturePair(
            next_id, pair.atoms, 0.0, pair.f_c_value, pair.f_r_value
        ))
        existing.add(frozenset(pair.atoms))
        next_id += 1
    combined = HmlnModel(
        atoms={a: content[a] for a in sorted(content)},
        features=model.features + tuple(new_pairs),
        epsilon=model.epsilon,
        evidence=model.evidence,
    )
    return with_real_terms(combined, terms)


def training_instances(records: Sequence[DatasetRecord],
                       model: HmlnModel) -> list[TrainingInstance]:
    """Records as observed worlds: caption atoms 1, the rest closed-world 0."""
    out = []
    for r in records:
        for p in r.predicates:
            if p.id not in model.atoms:
                raise ValidationError(
                    f"instance {r.instance_id!r}: atom {p.id!r} not in model"
                )
        out.append(TrainingInstance(
            instance_id=r.instance_id,
            observed={p.id: 1 for p in r.predicates},
            real_terms={p.id: p.g for p in r.predicates},
        ))
    return out


def trace_examples(records: Sequence[DatasetRecord],
                   model: HmlnModel) -> list[TraceExample]:
    """Records as backtrace examples; terms are kept for model atoms only."""
    return [
        TraceExample(
            example_id=r.instance_id,
            predicates=tuple(r.predicates),
            real_terms={p.id: p.g for p in r.predicates if p.id in model.atoms},
        )
        for r in records
    ]


def _model_obj(model: HmlnModel, provenance: Mapping | None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "epsilon": model.epsilon,
        "atoms": [
            {"id": a, "subject": p.subject, "relation": p.relation,
             "object": p.object, "g": p.g}
            for a, p in sorted(model.atoms.items())
        ],
        "features": [
            {"id": f.id, "atoms": list(f.atoms), "weight": f.weight,
             "f_c_value": f.f_c_value, "f_r_value": f.f_r_value}
            for f in model.features
        ],
        "evidence": {a: model.evidence[a] for a in sorted(model.evidence)},
        "provenance": {k: (provenance or {})[k] for k in sorted(provenance or {})},
    }


def dumps_model(model: HmlnModel, provenance: Mapping | None = None) -> str:
    return canonical_json(_model_obj(model, provenance)) + "\n"


def save_model(model: HmlnModel, path: str | Path,
               provenance: Mapping | None = None) -> None:
    Path(path).write_text(dumps_model(model, provenance))


def parse_model(text: str, source: str = "<string>") -> HmlnModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{source}: malformed JSON: {e.msg}") from None
    if not isinstance(obj, dict) or obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{source}: unrecognized model schema")
    try:
        atoms = {}
        for a in obj.get("atoms", []):
            pred = GroundPredicate(
                id=a["id"], subject=a["subject"], relation=a["relation"],
                object=a.get("object", ""), g=float(a["g"]),
            )
            atoms[pred.id] = pred
        features = tuple(
            FeaturePair(
                id=int(f["id"]), atoms=tuple(f["atoms"]),
                weight=float(f["weight"]),
                # stored potentials are authoritative: recomputing them
                # from rounded g would break byte-stable round-trips
                f_c_value=float(f["f_c_value"]),
                f_r_value=float(f["f_r_value"]),
            )
            for f in obj.get("features", [])
        )
        evidence = {str(k): int(v) for k, v in obj.get("evidence", {}).items()}
        return HmlnModel(
            atoms=atoms, features=features,
            epsilon=float(obj.get("epsilon", DEFAULT_EPSILON)),
            evidence=evidence,
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"{source}: bad model field: {e}") from None
    except ValidationError as e:
        raise ValidationError(f"{source}: {e}") from None


def load_model(path: str | Path) -> HmlnModel:
    path = Path(path)
    return parse_model(path.read_text(), source=str(path))
