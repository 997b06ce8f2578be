"""Stimulus inputs: word sequences, run structure, scramble plans."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ekc


@dataclass(frozen=True)
class Stimulus:
    """Ordered words with per-word run ids (runs are independent reading blocks)."""

    words: tuple[str, ...]
    run_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.words) != len(self.run_ids):
            raise ValueError("words and run_ids must have equal length")
        if not self.words:
            raise ValueError("empty stimulus")

    @property
    def n_words(self) -> int:
        return len(self.words)

    def run_start(self, i: int) -> int:
        """Index of the first word of the run containing position i."""
        run = self.run_ids[i]
        j = i
        while j > 0 and self.run_ids[j - 1] == run:
            j -= 1
        return j


def load_stimulus(path) -> Stimulus:
    """Words and run structure from a timeline container (onsets are not needed)."""
    t = ekc.read(path)
    meta = ekc.unpack_meta(t["meta"])
    if meta.get("kind") != "timeline":
        raise ValueError(f"{path}: expected a timeline container, got {meta.get('kind')!r}")
    return Stimulus(tuple(meta["words"]), tuple(int(r) for r in t["run_id"]))


def stimulus_from_text(text: str) -> Stimulus:
    words = tuple(text.split())
    return Stimulus(words, (0,) * len(words))


def load_plan(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for w in doc["windows"]:
        size = int(w["stop"]) - int(w["start"])
        if sorted(w["permutation"]) != list(range(size)):
            raise ValueError(f"plan window at {w['start']} is not a bijection")
    return doc


def apply_plan(stimulus: Stimulus, plan: dict) -> Stimulus:
    """Reorder words within the plan's windows; run structure is untouched."""
    covered = sum(int(w["stop"]) - int(w["start"]) for w in plan["windows"])
    if covered != stimulus.n_words:
        raise ValueError(f"plan covers {covered} words, stimulus has {stimulus.n_words}")
    out = list(stimulus.words)
    for w in plan["windows"]:
        start, stop = int(w["start"]), int(w["stop"])
        chunk = stimulus.words[start:stop]
        out[start:stop] = [chunk[p] for p in w["permutation"]]
    return Stimulus(tuple(out), stimulus.run_ids)
