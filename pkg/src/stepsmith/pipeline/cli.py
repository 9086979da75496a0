"""Argument parsing and exit-code policy for the `stepsmith` command.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data
(simfiles, audio, datasets, checkpoints), 3 numeric failure (tempo
estimation breakdown, divergent training).
"""

from __future__ import annotations

import argparse
import sys

from stepsmith.errors import (
    AudioError,
    CheckpointError,
    DataError,
    NumericError,
    SimfileError,
    TempoError,
    UsageError,
)
from stepsmith.pipeline import commands
from stepsmith.pipeline.config import load_config


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_shared(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", help="key = value config file")
    sub.add_argument("--seed", type=int, metavar="N", help="override the run seed")
    sub.add_argument("--out", metavar="DIR", help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepsmith",
                     description="Stepchart generation toolkit: featurize, "
                                 "train, evaluate, and write .sm simfiles.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    specs = [
        ("featurize", "fill the feature cache for a dataset", False),
        ("train-placement", "train the step placement model", False),
        ("train-selection", "train the step selection model", False),
        ("evaluate", "score both models on the test split", False),
        ("generate", "write a 5-difficulty simfile for a WAV", True),
        ("tempo", "print `bpm offset confidence` for a WAV", True),
    ]
    for name, help_text, takes_audio in specs:
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        _add_shared(cmd)
        if takes_audio:
            cmd.add_argument("audio", metavar="WAV", help="input audio file")
    gen = next(a for a in sub.choices.values() if a.prog.endswith("generate"))
    gen.add_argument("--difficulty", type=int, metavar="D",
                     help="anchor fine difficulty instead of the bpm/length formula")
    gen.add_argument("--threshold", type=float, metavar="P",
                     help="placement probability threshold")
    gen.add_argument("--temperature", type=float, metavar="T",
                     help="selection sampling temperature (0 = argmax)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {"seed": "seed", "out": "out_dir", "difficulty": "difficulty",
               "threshold": "threshold", "temperature": "temperature"}
    out = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "featurize":
            commands.cmd_featurize(cfg)
        elif args.command == "train-placement":
            commands.cmd_train_placement(cfg)
        elif args.command == "train-selection":
            commands.cmd_train_selection(cfg)
        elif args.command == "evaluate":
            commands.cmd_evaluate(cfg)
        elif args.command == "generate":
            commands.cmd_generate(cfg, args.audio)
        else:
            commands.cmd_tempo(cfg, args.audio)
    except UsageError as exc:
        print(f"stepsmith: {exc}", file=sys.stderr)
        return 1
    except (SimfileError, AudioError, DataError, CheckpointError) as exc:
        print(f"stepsmith: {exc}", file=sys.stderr)
        return 2
    except (TempoError, NumericError) as exc:
        print(f"stepsmith: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
