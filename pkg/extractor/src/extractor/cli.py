"""Command-line entry mirroring the ExtractionJob fields."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionJob, extract
from .models import REGISTRY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activation-extract",
        description="Export CNN activations, labels, and a pooled-input head",
    )
    parser.add_argument("--model", required=True, choices=sorted(REGISTRY))
    parser.add_argument("--dataset", required=True, help="image folder with class subdirectories")
    parser.add_argument("--output", required=True, help="output directory")
    parser.add_argument("--layers", default="", help="comma-separated module names (default: model's)")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--normalize", choices=("unit", "imagenet"), default="unit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        model=args.model,
        dataset_dir=args.dataset,
        output_dir=args.output,
        layers=[s for s in args.layers.split(",") if s],
        batch_size=args.batch_size,
        image_size=args.image_size,
        seed=args.seed,
        device=args.device,
        normalize=args.normalize,
    )
    try:
        manifest = extract(job)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
