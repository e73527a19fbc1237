"""Command-line interface.

Every command writes a timestamped run directory under --out containing a
config snapshot (config.json), a log, and its artifacts. Configuration is
layered: size preset, then a key=value config file, then --set overrides.
Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from cellforge.cli import commands
from cellforge.cli.config import CliError

__all__ = ["main", "build_parser"]


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="runs", help="directory that collects run directories")
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--size", default="desk", choices=["desk", "paper"],
                        help="scale preset: desk is 32x32, paper is 64x64")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellforge", description=__doc__)
    common = _common()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="render the labeled train/test image dataset")
    p.set_defaults(func=commands.cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common],
                       help="pretrain the class-conditional generator")
    p.add_argument("--data", default=None, help="gen-data output directory")
    p.set_defaults(func=commands.cmd_pretrain)

    p = sub.add_parser("sample", parents=[common], help="sample images from a checkpoint")
    p.add_argument("--checkpoint", default=None, help="generator checkpoint (.pt)")
    p.add_argument("--per-class", type=int, default=None, help="images per class")
    p.add_argument("--prefix", default="syn", help="sample id prefix")
    p.add_argument("--guidance-classifier", default=None,
                   help="sample with classifier guidance from this classifier (.pt)")
    p.set_defaults(func=commands.cmd_sample)

    p = sub.add_parser("serve", parents=[common],
                       help="run the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default=None,
                   help="feedback/session storage (default: OUT/feedback-data)")
    p.add_argument("--checkpoint", action="append", dest="checkpoints", metavar="NAME=PATH",
                   help="register a generator checkpoint (repeatable)")
    p.set_defaults(func=commands.cmd_serve)

    p = sub.add_parser("oracle-annotate", parents=[common],
                       help="label a session's images with the rule oracle")
    p.add_argument("--data-dir", default=None,
                   help="feedback/session storage (default: OUT/feedback-data)")
    p.add_argument("--checkpoint", action="append", dest="checkpoints", metavar="NAME=PATH",
                   help="register a generator checkpoint (repeatable)")
    p.add_argument("--checkpoint-id", default="pretrained",
                   help="checkpoint to sample the session pool from")
    p.add_argument("--session", default=None,
                   help="annotate an existing session instead of creating one")
    p.set_defaults(func=commands.cmd_oracle_annotate)

    p = sub.add_parser("train-reward", parents=[common],
                       help="train the plausibility reward model from feedback")
    p.add_argument("--data", default=None, help="gen-data output directory")
    p.add_argument("--export", default=None, help="feedback export (.ndjson)")
    p.add_argument("--data-dir", default=None,
                   help="service storage holding the annotated images")
    p.set_defaults(func=commands.cmd_train_reward)

    p = sub.add_parser("finetune", parents=[common],
                       help="finetune the generator against feedback")
    p.add_argument("--mode", required=True,
                   choices=sorted(commands.MODE_ALIASES),
                   help="reward (feedback-weighted), guided (classifier guidance, "
                        "no human feedback), or concept (adds a subtype class)")
    p.add_argument("--checkpoint", default=None, help="generator checkpoint (.pt)")
    p.add_argument("--data", default=None, help="gen-data output directory")
    p.add_argument("--reward", default=None, help="reward model checkpoint (.pt)")
    p.add_argument("--export", default=None, help="feedback export (.ndjson)")
    p.add_argument("--data-dir", default=None,
                   help="service storage holding the annotated images")
    p.set_defaults(func=commands.cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score arms: fidelity, plausibility, downstream utility")
    p.add_argument("--data", default=None, help="gen-data output directory")
    p.add_argument("--arm", action="append", metavar="NAME[=CHECKPOINT]",
                   help="real, no-feedback, auto, feedback, concept, or name=path "
                        "(repeatable; default: no-feedback and feedback)")
    p.set_defaults(func=commands.cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common],
                       help="sweep the fraction of feedback used for finetuning")
    p.add_argument("--checkpoint", default=None, help="generator checkpoint (.pt)")
    p.add_argument("--data", default=None, help="gen-data output directory")
    p.add_argument("--export", default=None, help="feedback export (.ndjson)")
    p.add_argument("--data-dir", default=None,
                   help="service storage holding the annotated images")
    p.add_argument("--fraction", action="append", dest="fractions", type=float,
                   help="feedback fraction to include (repeatable)")
    p.set_defaults(func=commands.cmd_ablate)

    p = sub.add_parser("repro-all", parents=[common],
                       help="run the full pipeline end to end with one seed")
    p.set_defaults(func=commands.cmd_repro_all)

    return parser


def _fail(command: str, message: str, hint: Optional[str]) -> None:
    payload = {"error": message, "command": command}
    if hint:
        payload["hint"] = hint
    print(json.dumps(payload), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    args.argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        run_dir = args.func(args)
    except CliError as exc:
        _fail(args.command, str(exc), exc.hint)
        return 1
    except FileNotFoundError as exc:
        _fail(args.command, str(exc), None)
        return 1
    except (ValueError, KeyError) as exc:
        _fail(args.command, str(exc.args[0]) if exc.args else str(exc), None)
        return 1
    except KeyboardInterrupt:
        print(json.dumps({"error": "interrupted", "command": args.command}), file=sys.stderr)
        return 130
    print(f"run directory: {run_dir}")
    return 0
