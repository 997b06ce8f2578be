"""Next-word-prediction perplexity and inference-time word scrambling.

Perplexity is computed from log-probabilities supplied by an embedding
extractor; no language model runs here.  Scramble plans permute words
within fixed windows (default 20 words, the span feeding one TR
prediction), preserving per-window word multisets while destroying
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .datamodel import EmbeddingTrack, StimulusTimeline, ValidationError


def perplexity(log_probs, present=None) -> float:
    """exp of the negative mean natural-log probability.

    Parameters
    ----------
    log_probs : array of float64
        Per-position natural-log probabilities, all <= 0 where present.
    present : bool array, optional
        Mask of positions that carry a value (defaults to all).

    The mean uses exact summation (math.fsum), so the result is bitwise
    invariant under permutation of the inputs.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 1:
        raise ValidationError("log_probs must be a 1-D vector")
    if present is not None:
        present = np.asarray(present, dtype=bool)
        if present.shape != lp.shape:
            raise ValidationError("presence mask must match log_probs length")
        lp = lp[present]
    if lp.size == 0:
        raise ValidationError("perplexity needs at least one present log-probability")
    if np.any(lp > 0):
        raise ValidationError("log-probabilities must be <= 0")
    if not np.all(np.isfinite(lp)):
        raise ValidationError("log-probabilities must be finite")
    return math.exp(-math.fsum(lp.tolist()) / lp.size)


def track_perplexity(track: EmbeddingTrack, word_range: tuple[int, int] | None = None) -> float:
    """Perplexity of a track's present log-probs, optionally over [start, stop).

    Defaults to the track's recorded eval_word_range when one is present.
    """
    if word_range is None:
        word_range = track.eval_word_range
    lp, present = track.log_probs, track.log_prob_present
    if word_range is not None:
        start, stop = word_range
        lp, present = lp[start:stop], present[start:stop]
    return perplexity(lp, present)


@dataclass(frozen=True)
class ScrambleWindow:
    run_id: int
    start: int          # word index into the timeline, inclusive
    stop: int           # exclusive
    permutation: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))
        w = self.stop - self.start
        if w < 1:
            raise ValidationError(f"window [{self.start}, {self.stop}) is empty")
        if sorted(self.permutation) != list(range(w)):
            raise ValidationError(
                f"permutation {self.permutation} is not a bijection on {w} positions")


@dataclass(frozen=True)
class ScramblePlan:
    """Per-window permutations tiling each run's word sequence without overlap."""

    window_size: int
    seed: int
    windows: tuple[ScrambleWindow, ...]

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if self.window_size < 2:
            raise ValidationError(f"window_size must be >= 2, got {self.window_size}")
        by_run: dict[int, list[ScrambleWindow]] = {}
        for w in self.windows:
            by_run.setdefault(w.run_id, []).append(w)
        for run_id, ws in by_run.items():
            ws.sort(key=lambda w: w.start)
            for a, b in zip(ws, ws[1:]):
                if a.stop != b.start:
                    raise ValidationError(
                        f"windows of run {run_id} do not tile: gap/overlap at {a.stop} vs {b.start}")

    @property
    def n_words(self) -> int:
        return sum(w.stop - w.start for w in self.windows)


def _draw_permutation(rng: np.random.Generator, size: int) -> np.ndarray:
    # identity permutations are re-drawn so every window of size >= 2 moves
    perm = rng.permutation(size)
    while size >= 2 and np.array_equal(perm, np.arange(size)):
        perm = rng.permutation(size)
    return perm


def make_scramble_plan(timeline: StimulusTimeline, window_size: int = 20,
                       seed: int = 0) -> ScramblePlan:
    """Tile each run into consecutive windows and draw one seeded permutation each.

    The final short window of a run is kept and permuted within itself so
    scrambled and unscrambled tracks stay word-count aligned.
    """
    if window_size < 2:
        raise ValidationError(f"window_size must be >= 2, got {window_size}")
    rng = np.random.default_rng(seed)
    windows = []
    for run_id in range(timeline.n_runs):
        idx = timeline.word_indices_of_run(run_id)
        start, stop = int(idx[0]), int(idx[-1]) + 1
        if not np.array_equal(idx, np.arange(start, stop)):
            raise ValidationError(f"run {run_id} words are not contiguous in the timeline")
        for w0 in range(start, stop, window_size):
            w1 = min(w0 + window_size, stop)
            perm = _draw_permutation(rng, w1 - w0)
            windows.append(ScrambleWindow(run_id, w0, w1, tuple(perm.tolist())))
    return ScramblePlan(window_size=window_size, seed=seed, windows=tuple(windows))


def identity_plan(timeline: StimulusTimeline, window_size: int = 20) -> ScramblePlan:
    """Testing hook: a plan whose application is the identity."""
    plan = make_scramble_plan(timeline, window_size=window_size, seed=0)
    windows = tuple(
        ScrambleWindow(w.run_id, w.start, w.stop, tuple(range(w.stop - w.start)))
        for w in plan.windows)
    return ScramblePlan(window_size=window_size, seed=0, windows=windows)


def invert_plan(plan: ScramblePlan) -> ScramblePlan:
    windows = []
    for w in plan.windows:
        inv = [0] * len(w.permutation)
        for i, p in enumerate(w.permutation):
            inv[p] = i
        windows.append(ScrambleWindow(w.run_id, w.start, w.stop, tuple(inv)))
    return ScramblePlan(plan.window_size, plan.seed, tuple(windows))


def apply_plan_to_text(timeline: StimulusTimeline, plan: ScramblePlan) -> list[str]:
    """Reorder word texts within windows; onsets and run structure are untouched,
    so each position's TR assignment is preserved."""
    texts = timeline.texts()
    if plan.n_words != timeline.n_words:
        raise ValidationError(
            f"plan covers {plan.n_words} words, timeline has {timeline.n_words}")
    out = list(texts)
    for w in plan.windows:
        if w.stop > timeline.n_words:
            raise ValidationError(f"window [{w.start}, {w.stop}) beyond timeline end")
        if timeline.words[w.start].run_id != w.run_id:
            raise ValidationError(f"window at {w.start} expects run {w.run_id}")
        chunk = texts[w.start:w.stop]
        out[w.start:w.stop] = [chunk[p] for p in w.permutation]
    return out


def scrambled_timeline(timeline: StimulusTimeline, plan: ScramblePlan) -> StimulusTimeline:
    return timeline.with_texts(apply_plan_to_text(timeline, plan))


def save_plan(plan: ScramblePlan, path) -> None:
    doc = {
        "window_size": plan.window_size,
        "seed": plan.seed,
        "windows": [{"run_id": w.run_id, "start": w.start, "stop": w.stop,
                     "permutation": list(w.permutation)} for w in plan.windows],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_plan(path) -> ScramblePlan:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    windows = tuple(ScrambleWindow(int(w["run_id"]), int(w["start"]), int(w["stop"]),
                                   tuple(w["permutation"])) for w in doc["windows"])
    return ScramblePlan(int(doc["window_size"]), int(doc["seed"]), windows)
