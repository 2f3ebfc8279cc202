"""Command line front end. One input clip per invocation."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import BACKEND_NAMES, make_backend
from .errors import ClipExportError
from .export import ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="clip-export",
        description=(
            "Embed a still image, a directory of stills, or a video's evenly "
            "sampled frames, and write an IM2WEMB1 interchange file."
        ),
    )
    p.add_argument(
        "--input", required=True,
        help="image file, directory of stills, or video file",
    )
    p.add_argument(
        "--frames", type=int, default=1, metavar="M",
        help="number of rows to export (default: 1)",
    )
    p.add_argument("--out", required=True, help="output interchange file")
    p.add_argument(
        "--backend", choices=BACKEND_NAMES, default="clip",
        help="embedding backend (default: clip, the pretrained ViT-B/32)",
    )
    p.add_argument(
        "--weights", default=None,
        help="local checkpoint directory for the clip backend (default: hub cache)",
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            input_path=args.input, frames=args.frames, output_path=args.out
        )
        backend = make_backend(args.backend, args.weights)
        summary = export(job, backend)
    except (ClipExportError, ValueError) as e:
        print(f"clip-export: {e}", file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
