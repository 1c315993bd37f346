"""Command-line entry points: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import RunConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stagesum",
        description="Desk-scale multi-stage-pretrained abstractive summarization")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "emit synthetic corpora and the vocabulary"),
        ("pretrain", "masked-token denoising pretraining stage"),
        ("train", "summarization training under an initialization scheme"),
        ("select-train", "train the content selection model"),
        ("decode", "decode the dev corpus with a trained checkpoint"),
        ("eval", "score a decoded-output file against references"),
        ("grid", "run a comparative grid and emit its report"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the run configuration JSON file")
    args = parser.parse_args(argv)

    try:
        cfg = RunConfig.from_file(args.config)
        runner = {
            "generate": harness.run_generate,
            "pretrain": harness.run_pretrain,
            "train": harness.run_train,
            "select-train": harness.run_select_train,
            "decode": harness.run_decode,
            "eval": harness.run_eval,
            "grid": harness.run_grid,
        }[args.command]
        result = runner(cfg)
    except Exception as exc:  # noqa: BLE001 - diagnostic + nonzero exit, never silent
        print(f"stagesum {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, dict) and "report" in result:
        print(result["report"], end="")
    elif isinstance(result, dict):
        for key in sorted(result):
            print(f"{key}\t{result[key]}")
    elif result is not None:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
