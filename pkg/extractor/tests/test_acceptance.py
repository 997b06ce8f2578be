"""Secondary acceptance: directional next-word-prediction effects and
bit-exact conformance of extractor output with the analysis toolkit's
loader.

The protocol mirrors the brain-side regime: the chapter is split into 4
runs, the first three (75%) are the tuning text, and perplexity is
evaluated on the final run (25%) for all four conditions
(baseline | stimulus-tuned) x (unscrambled | scrambled).
"""

import json

import numpy as np

from conftest import make_plan
from extractor.stimulus import apply_plan, load_stimulus
from extractor.tracks import (ExtractionConfig, FinetuneSettings, extract_track, load_model,
                              save_track, word_perplexity)
from extractor.tuning import stimulus_tune


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_directional_perplexity_and_loader_conformance(model_dir, baseline,
                                                       chapter_stimulus, tmp_path):
    model, tokenizer = baseline
    n = chapter_stimulus.n_words
    eval_start = next(i for i in range(n) if chapter_stimulus.run_ids[i] == 3)
    eval_range = (eval_start, n)
    tune_text = " ".join(chapter_stimulus.words[:eval_start])

    tuned_dir = tmp_path / "tuned"
    tuned_model, _ = load_model(str(model_dir))
    stimulus_tune(tuned_model, tokenizer, tune_text, tuned_dir,
                  FinetuneSettings(trials=5, max_epochs=20, batch_size=4, seed=0))
    tuned_model.eval()

    plan = make_plan(chapter_stimulus, window_size=20, seed=5)
    config = ExtractionConfig(model_path=str(model_dir), batch_size=32,
                              eval_word_range=eval_range)
    conditions = {
        ("baseline", "none"): (model, None),
        ("baseline", "plan5"): (model, plan),
        ("stimulus-tuned", "none"): (tuned_model, None),
        ("stimulus-tuned", "plan5"): (tuned_model, plan),
    }
    ppl = {}
    paths = {}
    for (model_tag, scramble_tag), (m, p) in conditions.items():
        track = extract_track(config, chapter_stimulus, plan=p, model_tag=model_tag,
                              scramble_tag=scramble_tag, model=m, tokenizer=tokenizer)
        ppl[(model_tag, scramble_tag)] = word_perplexity(track, eval_range)
        path = tmp_path / f"{model_tag}__{scramble_tag}.track.ekc"
        save_track(track, path)
        paths[(model_tag, scramble_tag)] = (path, track)

    tuned_better = ppl[("stimulus-tuned", "none")] < ppl[("baseline", "none")]
    base_scr_worse = ppl[("baseline", "plan5")] > ppl[("baseline", "none")]
    tuned_scr_worse = ppl[("stimulus-tuned", "plan5")] > ppl[("stimulus-tuned", "none")]
    detail = (f"baseline {ppl[('baseline', 'none')]:.1f}, "
              f"tuned {ppl[('stimulus-tuned', 'none')]:.1f}, "
              f"baseline-scrambled {ppl[('baseline', 'plan5')]:.1f}, "
              f"tuned-scrambled {ppl[('stimulus-tuned', 'plan5')]:.1f}")
    report("directional_perplexity", tuned_better and base_scr_worse and tuned_scr_worse,
           detail)

    # conformance: every track file passes the analysis toolkit's loader with
    # bit-identical contents
    from encodekit.datamodel import load_track

    for (model_tag, scramble_tag), (path, track) in paths.items():
        loaded = load_track(path)
        assert loaded.model_tag == model_tag
        assert loaded.scramble_tag == scramble_tag
        assert loaded.eval_word_range == eval_range
        assert loaded.embeddings.tobytes() == track["embeddings"].astype(np.float32).tobytes()
        assert loaded.log_probs.tobytes() == track["log_probs"].astype(np.float64).tobytes()
        assert np.array_equal(loaded.log_prob_present, track["log_prob_present"])
    report("loader_conformance", True,
           "4 extractor-written tracks load through encodekit bit-exactly")


def test_round_trip_through_primary_timeline(model_dir, baseline, chapter_stimulus,
                                             tmp_path):
    # a timeline written by the analysis toolkit is a valid extractor input
    from encodekit.datamodel import StimulusTimeline, Word, save_timeline

    words = []
    tr, spacing = 2.0, 0.5
    counts = []
    for r in range(4):
        idx = [i for i in range(chapter_stimulus.n_words) if chapter_stimulus.run_ids[i] == r]
        for k, i in enumerate(idx):
            words.append(Word(chapter_stimulus.words[i], k * spacing, r))
        counts.append(int(np.ceil(len(idx) * spacing / tr)))
    timeline = StimulusTimeline(tuple(words), tr, tuple(counts))
    save_timeline(timeline, tmp_path / "timeline.ekc")

    stim = load_stimulus(tmp_path / "timeline.ekc")
    assert stim.words == chapter_stimulus.words
    assert stim.run_ids == chapter_stimulus.run_ids

    # and the extractor CLI consumes it end to end
    from extractor.cli import main

    code = main(["extract", "--model", str(model_dir),
                 "--timeline", str(tmp_path / "timeline.ekc"),
                 "--window", "20", "--batch-size", "32",
                 "--out", str(tmp_path / "cli.track.ekc")])
    assert code == 0
    from encodekit.datamodel import load_track

    track = load_track(tmp_path / "cli.track.ekc")
    assert track.n_words == chapter_stimulus.n_words
