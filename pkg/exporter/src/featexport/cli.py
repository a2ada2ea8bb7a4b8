"""Command line for the feature exporter."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .backbone import TAP_POINTS
from .export import DEFAULT_RESOLUTIONS, ExportConfig, export, load_image_list

logger = logging.getLogger("featexport")


def _resolutions(text: str) -> tuple:
    try:
        values = tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list '{text}'")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"bad resolution list '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="Export backbone activation grids plus a manifest.",
    )
    parser.add_argument("--images", required=True,
                        help="JSON-lines list: path, id, label, split per image")
    parser.add_argument("--out-dir", required=True, dest="out_dir")
    parser.add_argument("--resolutions", type=_resolutions,
                        default=DEFAULT_RESOLUTIONS, help="e.g. 224,336,504")
    parser.add_argument("--tap", choices=sorted(TAP_POINTS), default="block5_conv2")
    parser.add_argument("--weights", choices=["pretrained", "random"],
                        default="pretrained")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        images = load_image_list(args.images)
        config = ExportConfig(
            images=images,
            out_dir=args.out_dir,
            resolutions=args.resolutions,
            tap=args.tap,
            weights=args.weights,
            seed=args.seed,
        )
        result = export(config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return 2
    print(json.dumps({
        "manifest": str(result.manifest),
        "written": result.written,
        "skipped": result.skipped,
    }, sort_keys=True))
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
