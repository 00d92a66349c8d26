"""Command line: ``train``, ``eval``, ``synth-data`` and ``export-masks``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import config_keys, load_config
from .data import ingest
from .evaluate import evaluate_model, export_masks
from .synth import SyntheticSpec, synth_generate
from .train import load_model, train


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    result = train(cfg)
    print(json.dumps({"checkpoint": str(result.checkpoint), **result.final_eval}, indent=1))
    return 0


def _cmd_eval(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    ds = ingest(args.data)
    heads = len(model.cfg.head_names())
    if args.k is not None and args.k > heads:
        raise SystemExit(f"--k {args.k} exceeds the {heads} available heads")
    ks = [args.k] if args.k is not None else range(1, min(5, heads) + 1)
    order = args.head_order or cfg.eval.head_order
    acc, _ = evaluate_model(model, ds, cfg.augment, cfg.batch_size, ks, args.threshold, order,
                            per_region=args.per_region)
    print(json.dumps(acc, indent=1, sort_keys=True))
    return 0


def _cmd_synth(args) -> int:
    values = json.loads(Path(args.spec).read_text()) if args.spec else {}
    out = synth_generate(SyntheticSpec.from_dict(values), args.out, args.seed)
    print(out)
    return 0


def _cmd_masks(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    report = export_masks(model, ingest(args.data), args.out, cfg.augment, cfg.batch_size)
    print(json.dumps(report, indent=1, sort_keys=True) if report else "masks written; no ground truth for a hit report")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finegrain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="JSON file of flat dotted keys")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a class-per-folder dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, choices=range(1, 6), metavar="1..5")
    p.add_argument("--threshold", type=float)
    p.add_argument("--head-order", choices=("confidence", "fixed"))
    p.add_argument("--per-region", action="store_true", help="also report selected/dropped-region accuracy")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth-data", help="generate the synthetic motif dataset")
    p.add_argument("--spec", help="JSON file of SyntheticSpec fields (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("export-masks", help="write selection masks and the motif hit report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_masks)

    sub.add_parser("keys", help="list every config key").set_defaults(
        func=lambda args: print("\n".join(config_keys())) or 0
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
