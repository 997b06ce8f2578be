"""Extractor command line.

    extractor extract --model M --timeline t.ekc [--plan plan.json] --layer L \
        --window 20 --out track.ekc [--model-tag baseline] [--eval-range a:b]
    extractor tune --model M --text train.txt --trials 100 --out ckpt/

`--text file.txt` can replace `--timeline` for single-run plain-text input.
"""

from __future__ import annotations

import argparse
import sys

from .stimulus import load_plan, load_stimulus, stimulus_from_text
from .tracks import (AlignmentError, ExtractionConfig, FinetuneSettings, extract_track,
                     load_model, save_track)
from .tuning import stimulus_tune


def _cmd_extract(args) -> int:
    if bool(args.timeline) == bool(args.text):
        print("error: provide exactly one of --timeline or --text", file=sys.stderr)
        return 2
    stimulus = (load_stimulus(args.timeline) if args.timeline
                else stimulus_from_text(open(args.text, encoding="utf-8").read()))
    eval_range = None
    if args.eval_range:
        start, stop = args.eval_range.split(":")
        eval_range = (int(start), int(stop))
    config = ExtractionConfig(model_path=args.model, layer=args.layer,
                              context_window=args.window, batch_size=args.batch_size,
                              eval_word_range=eval_range)
    plan = load_plan(args.plan) if args.plan else None
    track = extract_track(config, stimulus, plan=plan, model_tag=args.model_tag,
                          scramble_tag=args.scramble_tag)
    save_track(track, args.out)
    print(f"wrote track {track['embeddings'].shape[0]} x {track['embeddings'].shape[1]} "
          f"(layer {track['meta']['layer']}) to {args.out}")
    return 0


def _cmd_tune(args) -> int:
    model, tokenizer = load_model(args.model)
    settings = FinetuneSettings(trials=args.trials, sequence_length=args.sequence_length,
                                max_epochs=args.max_epochs, seed=args.seed)
    text = open(args.text, encoding="utf-8").read()
    result = stimulus_tune(model, tokenizer, text, args.out, settings)
    winner = result.trials[result.winner_index]
    print(f"tuned checkpoint in {result.checkpoint_dir} "
          f"(winner lr {winner.learning_rate:.3g}, wd {winner.weight_decay:.3g}, "
          f"{winner.epochs_trained} epochs, val loss {winner.best_val_loss:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extractor",
                                     description="Embedding tracks and stimulus-tuning "
                                                 "for causal language models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract an embedding track")
    p.add_argument("--model", required=True)
    p.add_argument("--timeline", default=None)
    p.add_argument("--text", default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--model-tag", default="baseline")
    p.add_argument("--scramble-tag", default=None)
    p.add_argument("--eval-range", default=None, help="word index range start:stop")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("tune", help="stimulus-tune a model checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sequence-length", type=int, default=80)
    p.add_argument("--max-epochs", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
