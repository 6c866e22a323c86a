"""Command-line surface for the pipeline.

Subcommands compose the library stages over the interchange files:

    ground    pool dataset records into a zero-weight grounded model
    learn     fit weights on train-split records by contrastive divergence
    map       score generated captions against references by MAP objective
    backtrace trace generated captions to contrastive training examples
    export-lp write one instance's MAP program in CPLEX LP format
    report    join backtrace output with caption similarities

Exit codes: 0 success, 1 validation/usage error, 2 size-guard refusal.
A single --seed drives all randomness and is recorded in outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from .backtrace import (
    BacktraceConfig,
    contextually_relevant,
    estimate_densities,
    similarity_report_x,
)
from .errors import GuardError, HmlnError, ValidationError
from .io import (
    SCHEMA_VERSION,
    augment_model,
    build_model,
    canonical_json,
    dumps_model,
    load_dataset,
    load_model,
    load_similarity,
    trace_examples,
    training_instances,
)
from .learning import LearningConfig, fit
from .mapinfer import SCORE_FLOOR, build_soft_evidence, encode, map_score, write_lp
from .model import DEFAULT_EPSILON
from .sampler import SamplerConfig

log = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=None,
                        help="root seed for all randomness (default 0)")
    parent.add_argument("--config", default=None, help="JSON config file")
    parent.add_argument("--out", default=None,
                        help="output path (default: stdout)")
    p = _Parser(prog="hmln", description="hybrid Markov logic pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("ground", parents=[parent],
                       help="build a grounded model from dataset records")
    g.add_argument("--data", action="append", required=True,
                   help="dataset JSONL (repeatable)")

    l = sub.add_parser("learn", parents=[parent],
                       help="fit weights on train-split records")
    l.add_argument("--data", action="append", required=True)
    l.add_argument("--model", required=True, help="grounded model JSON")

    m = sub.add_parser("map", parents=[parent],
                       help="MAP-score generated vs reference captions")
    m.add_argument("--model", required=True)
    m.add_argument("--generated", required=True, help="generated-caption JSONL")
    m.add_argument("--reference", required=True, help="reference-caption JSONL")
    m.add_argument("--sim", required=True, help="token similarity TSV")

    b = sub.add_parser("backtrace", parents=[parent],
                       help="contrastive training-example densities")
    b.add_argument("--model", required=True)
    b.add_argument("--generated", required=True)
    b.add_argument("--train", required=True, help="training-corpus JSONL")
    b.add_argument("--sim", required=True)

    e = sub.add_parser("export-lp", parents=[parent],
                       help="write one instance's MAP program as an LP file")
    e.add_argument("--model", required=True)
    e.add_argument("--generated", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--sim", required=True)
    e.add_argument("--instance", default=None,
                   help="instance_id to export (needed with several instances)")

    r = sub.add_parser("report", parents=[parent],
                       help="join backtrace output with caption similarities")
    r.add_argument("--trace", required=True, help="backtrace output JSONL")
    r.add_argument("--generated", required=True)
    return p


def _load_config(path: str | None) -> tuple[dict, str]:
    if path is None:
        return {}, "none"
    raw = Path(path).read_bytes()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: malformed JSON: {e.msg}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return obj, hashlib.sha256(raw).hexdigest()


def _section(config: dict, name: str) -> dict:
    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    return sec


def _make(cls, section: dict, **overrides):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ValidationError(
            f"unknown {cls.__name__} option(s): {', '.join(sorted(unknown))}"
        )
    try:
        return cls(**{**section, **overrides})
    except TypeError as e:
        raise ValidationError(f"bad {cls.__name__} options: {e}") from None


def _root_seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    seed = config.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("config seed must be an integer")
    return seed


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _provenance(command: str, seed: int, config_hash: str) -> dict:
    return {"command": command, "config_sha256": config_hash, "seed": seed}


def _load_records(paths) -> list:
    records = []
    for path in paths:
        records.extend(load_dataset(path))
    return records


def _cmd_ground(args, config, config_hash, seed) -> int:
    records = _load_records(args.data)
    epsilon = config.get("epsilon", DEFAULT_EPSILON)
    model = build_model(records, float(epsilon))
    _emit(dumps_model(model, _provenance("ground", seed, config_hash)), args.out)
    return 0


def _cmd_learn(args, config, config_hash, seed) -> int:
    model = load_model(args.model)
    records = [r for r in _load_records(args.data) if r.split == "train"]
    if not records:
        raise ValidationError("no train-split records in the given data")
    instances = training_instances(records, model)
    lc = _make(LearningConfig, _section(config, "learning"), seed=seed)
    learned = fit(model, instances, lc)
    _emit(dumps_model(learned, _provenance("learn", seed, config_hash)), args.out)
    return 0


def _pair_records(generated, reference):
    ref_by_id = {r.instance_id: r for r in reference}
    for rec in sorted(generated, key=lambda r: r.instance_id):
        ref = ref_by_id.get(rec.instance_id)
        if ref is None:
            raise ValidationError(
                f"no reference record for instance {rec.instance_id!r}"
            )
        yield rec, ref


def _cmd_map(args, config, config_hash, seed) -> int:
    model = load_model(args.model)
    sim = load_similarity(args.sim)
    floor = float(_section(config, "map").get("score_floor", SCORE_FLOOR))
    scores = []
    for rec, ref in _pair_records(load_dataset(args.generated),
                                  load_dataset(args.reference)):
        slice_model = augment_model(model, [rec, ref])
        value = map_score(slice_model, rec.predicates, ref.predicates, sim, floor)
        scores.append({"instance_id": rec.instance_id, "objective": value})
    mean = sum(s["objective"] for s in scores) / len(scores) if scores else None
    out = {
        "schema_version": SCHEMA_VERSION,
        "scores": scores,
        "mean_objective": mean,
        "score_floor": floor,
        "seed": seed,
    }
    _emit(canonical_json(out) + "\n", args.out)
    return 0


def _cmd_backtrace(args, config, config_hash, seed) -> int:
    model = load_model(args.model)
    sim = load_similarity(args.sim)
    train = [r for r in load_dataset(args.train) if r.split == "train"]
    sampler_sec = _section(config, "sampler")
    trace_sec = _section(config, "backtrace")
    lines = []
    generated = sorted(load_dataset(args.generated), key=lambda r: r.instance_id)
    for idx, rec in enumerate(generated):
        slice_model = augment_model(model, [rec])
        bc = _make(
            BacktraceConfig, trace_sec,
            sampler=_make(SamplerConfig, sampler_sec, seed=seed + idx),
        )
        examples = trace_examples(train, slice_model)
        relevant = contextually_relevant(
            examples, rec.predicates, sim, bc.relevance_threshold
        )
        if relevant:
            result = estimate_densities(
                slice_model, rec.predicates, relevant, bc, sim
            )
            densities = {k: result.per_example[k]
                         for k in sorted(result.per_example)}
            joint = math.prod(densities.values())
            log_joint = (sum(math.log(d) for d in densities.values())
                         if all(d > 0.0 for d in densities.values()) else None)
            maximal, minimal, hell = result.maximal, result.minimal, result.hellinger
        else:
            log.warning("instance %s: no contextually relevant examples",
                        rec.instance_id)
            densities, joint, log_joint = {}, None, None
            maximal = minimal = hell = None
        lines.append({
            "schema_version": SCHEMA_VERSION,
            "instance_id": rec.instance_id,
            "densities": densities,
            "maximal": maximal,
            "minimal": minimal,
            "hellinger": hell,
            "joint": joint,
            "log_joint": log_joint,
            "relevance_threshold": bc.relevance_threshold,
            "clip_threshold": bc.clip_threshold,
            "seed": seed,
        })
    _emit("".join(canonical_json(o) + "\n" for o in lines), args.out)
    return 0


def _cmd_export_lp(args, config, config_hash, seed) -> int:
    model = load_model(args.model)
    sim = load_similarity(args.sim)
    floor = float(_section(config, "map").get("score_floor", SCORE_FLOOR))
    pairs = list(_pair_records(load_dataset(args.generated),
                               load_dataset(args.reference)))
    if args.instance is not None:
        pairs = [p for p in pairs if p[0].instance_id == args.instance]
        if not pairs:
            raise ValidationError(f"instance {args.instance!r} not found")
    if len(pairs) != 1:
        raise ValidationError(
            f"{len(pairs)} instances in input; pick one with --instance"
        )
    rec, ref = pairs[0]
    slice_model = augment_model(model, [rec, ref])
    soft = build_soft_evidence(rec.predicates, ref.predicates, sim, floor)
    problem = encode(slice_model, {p.id: 1 for p in rec.predicates}, soft)
    _emit(write_lp(problem, name=rec.instance_id), args.out)
    return 0


def _cmd_report(args, config, config_hash, seed) -> int:
    by_id = {r.instance_id: r for r in load_dataset(args.generated)}
    lines = []
    for ln, raw in enumerate(Path(args.trace).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ValidationError(
                f"{args.trace}:{ln}: malformed JSON: {e.msg}"
            ) from None
        if not isinstance(rec, dict) or "instance_id" not in rec:
            raise ValidationError(f"{args.trace}:{ln}: not a backtrace record")
        instance_id = rec["instance_id"]
        data = by_id.get(instance_id)
        if data is None:
            raise ValidationError(
                f"{args.trace}:{ln}: instance {instance_id!r} missing from "
                "--generated"
            )
        avg = data.avg_caption_similarity
        lines.append({
            "schema_version": SCHEMA_VERSION,
            "instance_id": instance_id,
            "avg_caption_similarity": avg,
            "similarity_x": None if avg is None else similarity_report_x(avg),
            "densities": rec.get("densities", {}),
            "maximal": rec.get("maximal"),
            "minimal": rec.get("minimal"),
            "hellinger": rec.get("hellinger"),
            "joint": rec.get("joint"),
            "log_joint": rec.get("log_joint"),
        })
    _emit("".join(canonical_json(o) + "\n" for o in lines), args.out)
    return 0


_COMMANDS = {
    "ground": _cmd_ground,
    "learn": _cmd_learn,
    "map": _cmd_map,
    "backtrace": _cmd_backtrace,
    "export-lp": _cmd_export_lp,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config, config_hash = _load_config(args.config)
        seed = _root_seed(args, config)
        return _COMMANDS[args.command](args, config, config_hash, seed)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except GuardError as e:
        print(f"hmln: guard: {e}", file=sys.stderr)
        return 2
    except HmlnError as e:
        print(f"hmln: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"hmln: error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
