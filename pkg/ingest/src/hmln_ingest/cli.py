"""Command-line front end for the ingest pipeline."""

import argparse
import sys

from hmln_ingest.embed import IngestError, available_backends
from hmln_ingest.parse import ParseError
from hmln_ingest.pipeline import run_pipeline


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hmln-ingest",
        description="Extract caption predicates, score them against images, "
                    "and emit the JSONL/TSV files the inference engine reads.",
    )
    parser.add_argument("--annotations", required=True,
                        help="MSCOCO-style annotation JSON")
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument("--out-dir", required=True, help="output directory")
    parser.add_argument("--backend", default="color-sketch/v1",
                        help=f"embedding backend ({', '.join(available_backends())})")
    parser.add_argument("--seed", type=int, default=0,
                        help="root seed recorded in provenance")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        summary = run_pipeline(args.annotations, args.images, args.out_dir,
                               backend_name=args.backend, seed=args.seed)
    except (IngestError, ParseError, OSError) as exc:
        print(f"hmln-ingest: error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {summary['images']} records to {args.out_dir} "
          f"(skipped {len(summary['skipped'])})")
    return 0


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
