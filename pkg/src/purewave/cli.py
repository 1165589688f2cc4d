"""Command-line entry point.

One subcommand per pipeline stage; each runs end to end, writes its
artifacts under --out, and exits 0 on success. Failures print a single
machine-readable JSON object to stderr and exit nonzero (2 for expected
pipeline/validation errors, 3 for anything else).
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import PurewaveError
from .pipeline import STAGE_FUNCS, STAGES, stage_train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="purewave",
        description="Desk-scale audio attack / purification / detection pipeline.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None, help="JSON config file")
    common.add_argument("--seed", metavar="N", type=int, default=None, help="override the experiment seed")
    common.add_argument("--out", metavar="DIR", default="runs/desk", help="output directory (default: runs/desk)")
    common.add_argument("--workers", metavar="N", type=int, default=1, help="parallel worker processes")
    common.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        dest="overrides",
        default=None,
        help="override one config leaf, e.g. --set attack.c=5 (repeatable)",
    )

    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "corpus": "synthesize the evaluation and training corpora",
        "train": "train the recognizer and the noise predictor",
        "attack": "run the targeted attack over the evaluation corpus",
        "defend": "sweep purification depths over clean and attacked audio",
        "detect": "fit and evaluate the attack detector",
        "report": "aggregate all stage reports into one summary",
    }
    for stage in STAGES:
        sp = sub.add_parser(stage, parents=[common], help=helps[stage])
        if stage == "train":
            sp.add_argument(
                "--resume",
                action="store_true",
                help="reuse existing checkpoints after verifying their hashes",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        cfg = load_config(args.config, overrides=args.overrides, seed=args.seed)
        if args.command == "train":
            outcome = stage_train(cfg, args.out, workers=args.workers, resume=args.resume)
        else:
            outcome = STAGE_FUNCS[args.command](cfg, args.out, workers=args.workers)
    except PurewaveError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 3
    summary = {"stage": args.command, "out": args.out, "elapsed_seconds": outcome["manifest"]["elapsed_seconds"]}
    if args.command == "train" and outcome.get("resumed"):
        summary["resumed"] = True
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
