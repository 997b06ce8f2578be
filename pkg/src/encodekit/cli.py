"""Command-line interface.

    encodekit synth gen --spec spec.json --out dir/
    encodekit featurize --timeline t.ekc --track x.ekc --lags 1,2,3,4,5 --out design.ekc
    encodekit train --manifest run.json [--trials N] [--seed N] [--jobs J] [--out DIR]
    encodekit eval --manifest run.json
    encodekit stats significance|contrast|cross-contrast --manifest run.json
    encodekit lm perplexity --track x.ekc [--words a:b]
    encodekit lm scramble-plan --timeline t.ekc --seed N --window 20 --out plan.json
    encodekit report --manifest run.json
    encodekit run --manifest run.json [--seed N] [--jobs J] [--out DIR]

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .datamodel import (ContainerError, ManifestError, ValidationError, load_manifest,
                        load_timeline, load_track)
from .featurize import featurize_track, save_design
from .lmtasks import make_scramble_plan, save_plan, track_perplexity
from .pipeline import StageError, run_pipeline
from .synth import SynthSpec, generate, write_dataset


def _parse_lags(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _load_manifest_with_overrides(args) -> "RunManifest":  # noqa: F821
    manifest = load_manifest(args.manifest)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = Path(args.out)
    if getattr(args, "trials", None) is not None:
        updates["search"] = {**manifest.search, "trials": args.trials}
    return dataclasses.replace(manifest, **updates) if updates else manifest


def _cmd_synth(args) -> int:
    spec_doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    spec = SynthSpec.from_dict(spec_doc)
    manifest_path = write_dataset(generate(spec), args.out,
                                  search=spec_doc.get("search"),
                                  alpha=float(spec_doc.get("alpha", 0.05)))
    print(f"wrote synthetic dataset to {args.out} (manifest: {manifest_path})")
    return 0


def _cmd_featurize(args) -> int:
    timeline = load_timeline(args.timeline)
    track = load_track(args.track)
    design = featurize_track(track, timeline, _parse_lags(args.lags))
    save_design(design, args.out)
    print(f"wrote design {design.n_rows} x {design.n_features} "
          f"({design.n_valid} valid rows) to {args.out}")
    return 0


def _run(args, until: str) -> int:
    manifest = _load_manifest_with_overrides(args)
    result = run_pipeline(manifest, jobs=getattr(args, "jobs", 1), until=until,
                          force=getattr(args, "force", False))
    ran = ", ".join(result.stages_run) if result.stages_run else "nothing (all stages fresh)"
    print(f"out: {result.out_dir}")
    print(f"stages run: {ran}")
    if until in ("all", "train", "eval"):
        print(f"final models: {result.n_models}")
    return 0


def _cmd_stats(args) -> int:
    rc = _run(args, "stats")
    out = Path(_load_manifest_with_overrides(args).out_dir) / "contrasts"
    wanted = {"significance": (), "contrast": ("stimulus_tuning_gain", "scrambling_drop"),
              "cross-contrast": ("cross_perturbation",)}[args.which]
    for csv_path in sorted(out.glob("*.csv")) if out.exists() else []:
        if any(csv_path.name.startswith(w) for w in wanted):
            print(f"--- {csv_path.name}")
            print(csv_path.read_text(encoding="utf-8").rstrip())
    return rc


def _cmd_lm(args) -> int:
    if args.lm_command == "perplexity":
        track = load_track(args.track)
        word_range = None
        if args.words:
            start, stop = args.words.split(":")
            word_range = (int(start), int(stop))
        value = track_perplexity(track, word_range=word_range)
        print(f"{value:.6f}")
        return 0
    timeline = load_timeline(args.timeline)
    plan = make_scramble_plan(timeline, window_size=args.window, seed=args.seed)
    save_plan(plan, args.out)
    print(f"wrote scramble plan ({len(plan.windows)} windows) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encodekit",
                                     description="Lagged encoding models and perturbation "
                                                 "contrasts for embedding tracks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    g = synth_sub.add_parser("gen", help="generate a dataset from a SynthSpec JSON")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=_cmd_synth)

    p = sub.add_parser("featurize", help="build a lagged design matrix from a track")
    p.add_argument("--timeline", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--lags", default="1,2,3,4,5")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_featurize)

    for name, until in (("train", "train"), ("eval", "eval"), ("run", "all"),
                        ("report", "all")):
        p = sub.add_parser(name, help=f"run the pipeline through the {until} stage")
        p.add_argument("--manifest", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=None)
        p.add_argument("--force", action="store_true", help="ignore stage stamps")
        if name == "train":
            p.add_argument("--trials", type=int, default=None)
        p.set_defaults(func=lambda a, u=until: _run(a, u))

    p = sub.add_parser("stats", help="significance, ROI contrasts, cross-perturbation")
    p.add_argument("which", choices=["significance", "contrast", "cross-contrast"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("lm", help="perplexity and scramble plans")
    lm_sub = p.add_subparsers(dest="lm_command", required=True)
    q = lm_sub.add_parser("perplexity", help="perplexity of a track's log-probs")
    q.add_argument("--track", required=True)
    q.add_argument("--words", default=None, help="word index range start:stop")
    q.set_defaults(func=_cmd_lm)
    q = lm_sub.add_parser("scramble-plan", help="deterministic per-window permutations")
    q.add_argument("--timeline", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--window", type=int, default=20)
    q.add_argument("--out", required=True)
    q.set_defaults(func=_cmd_lm)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ManifestError, ValidationError, ContainerError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
