"""Command-line entry point: ``cbp <command> [options]``.

Exit status is 0 on success, 2 for configuration errors and 3 for runtime or
numeric failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbp", description="Conditional behavior prediction experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, n_help=None):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        if n_help:
            p.add_argument("--n", type=int, help=n_help)
        return p

    common(sub.add_parser("datagen", help="simulate a dataset"), "number of scenes")
    common(sub.add_parser("train", help="train the predictor"))
    p = common(sub.add_parser("score", help="pairwise interactivity scores and histogram"))
    p.add_argument("--m-samples", type=int, help="samples per query plan")
    p = common(sub.add_parser("mine", help="rank pairs by interactivity"), "number of top pairs to keep")
    p.add_argument("--m-samples", type=int, help="samples per query plan")
    p = common(sub.add_parser("prune", help="salient-agent pruning experiment"),
               "number of agents kept besides the AV (default 1,2,3,4)")
    p.add_argument("--strategy", choices=("mi", "distance", "both"), help="ranking strategy")
    p.add_argument("--m-samples", type=int, help="samples per query plan")
    v = sub.add_parser("validate", help="check output files against their schema")
    v.add_argument("paths", nargs="+")
    return ap


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
        k, val = item.split("=", 1)
        ov[k.strip()] = val.strip()
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.out is not None:
        ov["out"] = args.out
    if getattr(args, "m_samples", None) is not None:
        ov["m_samples"] = args.m_samples
    n = getattr(args, "n", None)
    if n is not None:
        ov[{"datagen": "n", "mine": "top_n", "prune": "n_keep"}[args.command]] = n
    strategy = getattr(args, "strategy", None)
    if strategy is not None:
        ov["strategy"] = "mi,distance" if strategy == "both" else strategy
    return ov


def _summary(command, result) -> dict:
    if command == "datagen":
        return result
    if command == "train":
        return {"checkpoint": result["checkpoint"], "epochs": result["epochs"], "last": result["log"][-1]}
    if command == "score":
        return {"pairs": len(result["reports"]), "bins": len(result["histogram"])}
    if command == "mine":
        return {"pairs": len(result["reports"]), "kept": len(result["rows"])}
    if command == "prune":
        return {"rows": result["rows"]}
    return result


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            for path in args.paths:
                print(f"{path}: ok ({harness.validate_file(path)})")
            return EXIT_OK
        cfg = harness.load_config(args.config, _overrides(args))
        result = getattr(harness, f"cmd_{args.command}")(cfg)
        print(json.dumps(_summary(args.command, result), indent=2, sort_keys=True, default=str))
        return EXIT_OK
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - surfaced as a runtime failure exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
