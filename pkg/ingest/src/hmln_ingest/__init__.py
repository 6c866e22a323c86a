"""Caption ingest pipeline.

Turns raw images plus captions into the two interchange files the core
engine reads: a JSONL dataset of scored predicates and a TSV table of
token similarities. The core never sees an image or a caption parser —
only these files.
"""

from hmln_ingest.embed import (
    ColorSketchBackend,
    EmbeddingBackend,
    IngestError,
    available_backends,
    cosine,
    get_backend,
    render_predicate,
)
from hmln_ingest.parse import ParseError, extract_predicates
from hmln_ingest.pipeline import (
    RawInstance,
    build_records,
    build_token_table,
    read_annotations,
    run_pipeline,
    validate_records,
    write_dataset,
    write_provenance,
    write_similarity,
)

__all__ = [
    "ColorSketchBackend",
    "EmbeddingBackend",
    "IngestError",
    "ParseError",
    "RawInstance",
    "available_backends",
    "build_records",
    "build_token_table",
    "cosine",
    "extract_predicates",
    "get_backend",
    "read_annotations",
    "render_predicate",
    "run_pipeline",
    "validate_records",
    "write_dataset",
    "write_provenance",
    "write_similarity",
]

__version__ = "0.1.0"
