"""Command-line front end.

``xsynth train|synthesize|evaluate|make-demo-data --manifest <csv>
--config <file> --out <dir> [--seed N] [--workers N]``

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (diverged loss or objective).  Log verbosity comes from the
XSYNTH_LOG environment variable (error, info or debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .demo import make_demo_data
from .errors import (
    ConfigError,
    DivergedLossError,
    DivergedObjectiveError,
    XsynthError,
)
from .manifest import load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("xsynth")


def _setup_logging() -> None:
    level_name = os.environ.get("XSYNTH_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"xsynth: XSYNTH_LOG must be one of {sorted(levels)}",
              file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    logging.basicConfig(
        level=levels[level_name],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xsynth",
        description="thermal-to-visible face synthesis and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_manifest=True):
        if need_manifest:
            p.add_argument("--manifest", required=True, help="dataset CSV")
            p.add_argument("--config", required=True, help="key = value file")
        p.add_argument("--out", required=True, help="working directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel image workers")

    add_common(sub.add_parser("train", help="fit per-region cross-spectrum maps"))
    add_common(sub.add_parser("synthesize", help="invert features into images"))
    add_common(sub.add_parser("evaluate", help="verification + quality report"))
    demo = sub.add_parser("make-demo-data", help="generate a synthetic corpus")
    add_common(demo, need_manifest=False)
    demo.add_argument("--subjects", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "make-demo-data":
            os.makedirs(args.out, exist_ok=True)
            manifest = make_demo_data(args.out, subjects=args.subjects,
                                      seed=args.seed if args.seed is not None else 7)
            print(f"demo corpus written; manifest: {manifest}")
            return EXIT_OK

        cfg = load_config(args.config, seed_override=args.seed,
                          workers_override=args.workers)
        os.makedirs(args.out, exist_ok=True)
        # imported late so --help stays fast
        from . import pipeline

        if args.command == "train":
            result = pipeline.cmd_train(args.manifest, cfg, args.out)
            print(f"trained {len(result['models'])} region models -> "
                  f"{os.path.join(args.out, 'models')}")
        elif args.command == "synthesize":
            result = pipeline.cmd_synthesize(args.manifest, cfg, args.out)
            print(f"synthesized {len(result['traces'])} images -> "
                  f"{os.path.join(args.out, 'synth')}")
        elif args.command == "evaluate":
            result = pipeline.cmd_evaluate(args.manifest, cfg, args.out)
            lm = result["mean_landmark_error"]
            print("evaluation: "
                  f"AUC synth {result['auc_synth']:.4f} vs raw "
                  f"{result['auc_raw']:.4f}; EER synth "
                  f"{result['eer_synth']:.4f}; mean SSIM "
                  f"{result['mean_ssim']:.4f}; landmark error "
                  + (f"{lm:.3f} px" if lm is not None else "n/a"))
        return EXIT_OK
    except ConfigError as exc:
        log.debug("config error", exc_info=True)
        print(f"xsynth: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedLossError, DivergedObjectiveError) as exc:
        log.debug("numerical failure", exc_info=True)
        print(f"xsynth: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (XsynthError, FileNotFoundError, OSError) as exc:
        log.debug("data error", exc_info=True)
        print(f"xsynth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
