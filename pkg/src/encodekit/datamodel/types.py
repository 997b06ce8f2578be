"""Shared domain types and their invariants.

All types are immutable after construction (frozen dataclasses; array
fields are marked read-only) and every invariant is checked in
``__post_init__`` so invalid data is rejected at the boundary instead of
being repaired downstream.

Conventions:
  - word onsets are seconds relative to the start of the word's run
  - voxel identifiers are opaque strings, stable across runs of one
    participant
  - undefined correlations and excluded p-values are carried as NaN with
    the undefined count recorded in report metadata
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """A domain-type invariant was violated."""


def _freeze(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Word:
    text: str
    onset_s: float
    run_id: int


@dataclass(frozen=True)
class StimulusTimeline:
    """Ordered stimulus words with presentation onsets and run structure."""

    words: tuple[Word, ...]
    tr_duration_s: float
    run_tr_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "run_tr_counts", tuple(int(c) for c in self.run_tr_counts))
        if not self.words:
            raise ValidationError("timeline has no words")
        if not (self.tr_duration_s > 0):
            raise ValidationError(f"tr_duration_s must be > 0, got {self.tr_duration_s}")
        if not self.run_tr_counts or any(c <= 0 for c in self.run_tr_counts):
            raise ValidationError("run_tr_counts must be non-empty positive integers")
        n_runs = len(self.run_tr_counts)
        seen_runs = sorted({w.run_id for w in self.words})
        if seen_runs != list(range(n_runs)):
            raise ValidationError(
                f"word run_ids {seen_runs} are not contiguous 0..{n_runs - 1}")
        prev_run = 0
        prev_onset = -math.inf
        for i, w in enumerate(self.words):
            if w.run_id < prev_run:
                raise ValidationError(f"word {i} run_id decreases ({prev_run} -> {w.run_id})")
            if w.run_id > prev_run:
                prev_onset = -math.inf
                prev_run = w.run_id
            if not (w.onset_s > prev_onset):
                raise ValidationError(
                    f"word {i} onset {w.onset_s} does not increase within run {w.run_id}")
            prev_onset = w.onset_s
            span = self.run_tr_counts[w.run_id] * self.tr_duration_s
            if not (0.0 <= w.onset_s < span):
                raise ValidationError(
                    f"word {i} onset {w.onset_s} outside run {w.run_id} TR span [0, {span})")

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_runs(self) -> int:
        return len(self.run_tr_counts)

    @property
    def total_trs(self) -> int:
        return sum(self.run_tr_counts)

    def run_row_offsets(self) -> np.ndarray:
        """Global row index of TR 0 of each run (designs and BOLD stack runs in order)."""
        return np.concatenate([[0], np.cumsum(self.run_tr_counts)[:-1]]).astype(np.int64)

    def texts(self) -> list[str]:
        return [w.text for w in self.words]

    def word_indices_of_run(self, run_id: int) -> np.ndarray:
        return np.array([i for i, w in enumerate(self.words) if w.run_id == run_id],
                        dtype=np.int64)

    def with_texts(self, texts: Sequence[str]) -> "StimulusTimeline":
        """Same onsets and run structure, different word texts (scrambled variants)."""
        if len(texts) != self.n_words:
            raise ValidationError(
                f"got {len(texts)} texts for a {self.n_words}-word timeline")
        new = tuple(Word(t, w.onset_s, w.run_id) for t, w in zip(texts, self.words))
        return replace(self, words=new)


@dataclass(frozen=True)
class EmbeddingTrack:
    """Per-word embeddings and next-word log-probabilities for one model variant.

    ``log_probs[i]`` is meaningful only where ``log_prob_present[i]`` is
    True (words with no prediction context carry no value); absent slots
    are stored as 0.0.  ``eval_word_range`` optionally records the word
    index range [start, stop) a producer designated for perplexity
    evaluation.
    """

    model_tag: str
    scramble_tag: str
    layer: int
    embeddings: np.ndarray
    log_probs: np.ndarray
    log_prob_present: np.ndarray
    context_window: int
    eval_word_range: tuple[int, int] | None = None

    def __post_init__(self):
        emb = np.asarray(self.embeddings)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise ValidationError(f"embeddings must be (n_words, d) with both > 0, got {emb.shape}")
        n = emb.shape[0]
        lp = np.asarray(self.log_probs, dtype=np.float64)
        present = np.asarray(self.log_prob_present, dtype=bool)
        if lp.shape != (n,) or present.shape != (n,):
            raise ValidationError("log_probs and log_prob_present must be 1-D of length n_words")
        if np.any(lp[present] > 0):
            raise ValidationError("present log-probabilities must be <= 0")
        if not np.all(np.isfinite(lp[present])):
            raise ValidationError("present log-probabilities must be finite")
        if self.context_window <= 0:
            raise ValidationError(f"context_window must be > 0, got {self.context_window}")
        if self.eval_word_range is not None:
            start, stop = self.eval_word_range
            if not (0 <= start < stop <= n):
                raise ValidationError(f"eval_word_range {self.eval_word_range} outside [0, {n}]")
            object.__setattr__(self, "eval_word_range", (int(start), int(stop)))
        lp = lp.copy()
        lp[~present] = 0.0
        object.__setattr__(self, "embeddings", _freeze(emb, np.float32))
        object.__setattr__(self, "log_probs", _freeze(lp, np.float64))
        object.__setattr__(self, "log_prob_present", _freeze(present, bool))

    @property
    def n_words(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def check_matches(self, timeline: StimulusTimeline) -> None:
        if self.n_words != timeline.n_words:
            raise ValidationError(
                f"track has {self.n_words} words, timeline has {timeline.n_words}")


@dataclass(frozen=True)
class BoldRun:
    """TR-by-voxel recording matrix for one participant and run."""

    participant_id: str
    run_id: int
    data: np.ndarray
    voxel_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.participant_id:
            raise ValidationError("participant_id must be non-empty")
        if self.run_id < 0:
            raise ValidationError(f"run_id must be >= 0, got {self.run_id}")
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"data must be (T, V) with both > 0, got {data.shape}")
        vids = tuple(str(v) for v in self.voxel_ids)
        if len(vids) != data.shape[1]:
            raise ValidationError(
                f"{len(vids)} voxel_ids for {data.shape[1]} data columns")
        if len(set(vids)) != len(vids):
            raise ValidationError("voxel_ids must be unique")
        object.__setattr__(self, "voxel_ids", vids)
        object.__setattr__(self, "data", _freeze(data, np.float32))

    @property
    def n_trs(self) -> int:
        return self.data.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.data.shape[1]

    def check_matches(self, timeline: StimulusTimeline) -> None:
        if self.run_id >= timeline.n_runs:
            raise ValidationError(f"run_id {self.run_id} outside timeline's {timeline.n_runs} runs")
        expected = timeline.run_tr_counts[self.run_id]
        if self.n_trs != expected:
            raise ValidationError(
                f"run {self.run_id} has {self.n_trs} TRs, timeline expects {expected}")


def check_run_set(runs: Sequence[BoldRun]) -> tuple[str, ...]:
    """Validate one participant's runs share identity and voxel order; return the voxel ids."""
    if not runs:
        raise ValidationError("empty BOLD run set")
    pid = runs[0].participant_id
    vids = runs[0].voxel_ids
    for r in runs[1:]:
        if r.participant_id != pid:
            raise ValidationError(f"mixed participants in run set: {pid} vs {r.participant_id}")
        if r.voxel_ids != vids:
            raise ValidationError(f"voxel_ids differ between runs of participant {pid}")
    if len({r.run_id for r in runs}) != len(runs):
        raise ValidationError(f"duplicate run_ids in run set of participant {pid}")
    return vids


@dataclass(frozen=True)
class RoiMask:
    """A named set of voxel identifiers."""

    name: str
    voxel_ids: frozenset[str]

    def __post_init__(self):
        if not self.name:
            raise ValidationError("ROI name must be non-empty")
        object.__setattr__(self, "voxel_ids", frozenset(str(v) for v in self.voxel_ids))


def check_mask_set(masks: Sequence[RoiMask]) -> None:
    names = [m.name for m in masks]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate ROI names in mask set: {names}")


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float
    weight_decay: float
    epochs_trained: int

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0 or self.epochs_trained < 0:
            raise ValidationError("hyperparameters must be non-negative")


@dataclass(frozen=True)
class Provenance:
    model_tag: str = ""
    scramble_tag: str = "none"
    seed: int = 0


@dataclass(frozen=True)
class EncodingModel:
    """Per-voxel linear prediction head for one (participant, heldout run) fold."""

    participant_id: str
    heldout_run: int
    weights: np.ndarray
    bias: np.ndarray
    hyperparameters: Hyperparameters
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValidationError(f"weights must be (F, V), got {w.shape}")
        if b.shape != (w.shape[1],):
            raise ValidationError(f"bias shape {b.shape} does not match {w.shape[1]} voxels")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("model weights and bias must be finite")
        object.__setattr__(self, "weights", _freeze(w, np.float32))
        object.__setattr__(self, "bias", _freeze(b, np.float32))

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReportMeta:
    participant_id: str
    model_tag: str
    scramble_tag: str
    folds: tuple[int, ...]
    alpha: float
    bh_threshold: float
    n_undefined: int = 0

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(int(f) for f in self.folds))
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.bh_threshold < 0 or self.n_undefined < 0:
            raise ValidationError("bh_threshold and n_undefined must be >= 0")


@dataclass(frozen=True)
class AlignmentReport:
    """Voxelwise fold-averaged correlations with FDR significance marks.

    NaN correlation marks a voxel flagged undefined (zero variance or too
    few finite folds); such voxels are never significant and are counted
    in ``meta.n_undefined``.
    """

    voxel_ids: tuple[str, ...]
    correlations: np.ndarray
    p_values: np.ndarray
    significant: np.ndarray
    meta: ReportMeta

    def __post_init__(self):
        vids = tuple(str(v) for v in self.voxel_ids)
        if len(set(vids)) != len(vids):
            raise ValidationError("voxel_ids must be unique")
        corr = np.asarray(self.correlations, dtype=np.float64)
        pval = np.asarray(self.p_values, dtype=np.float64)
        sig = np.asarray(self.significant, dtype=bool)
        n = len(vids)
        if corr.shape != (n,) or pval.shape != (n,) or sig.shape != (n,):
            raise ValidationError("per-voxel arrays must all have length len(voxel_ids)")
        finite = np.isfinite(corr)
        if np.any(np.abs(corr[finite]) > 1.0 + 1e-9):
            raise ValidationError("correlations must lie in [-1, 1] unless flagged NaN")
        pf = np.isfinite(pval)
        if np.any((pval[pf] < 0) | (pval[pf] > 1)):
            raise ValidationError("p-values must lie in [0, 1]")
        if np.any(sig & ~pf):
            raise ValidationError("significant voxels must carry a p-value")
        if np.any(pval[sig] > self.meta.bh_threshold):
            raise ValidationError("significant voxel p-value exceeds the BH threshold")
        object.__setattr__(self, "voxel_ids", vids)
        object.__setattr__(self, "correlations", _freeze(corr, np.float64))
        object.__setattr__(self, "p_values", _freeze(pval, np.float64))
        object.__setattr__(self, "significant", _freeze(sig, bool))

    @property
    def n_voxels(self) -> int:
        return len(self.voxel_ids)

    def correlation_by_voxel(self) -> dict[str, float]:
        return dict(zip(self.voxel_ids, self.correlations.tolist()))

    def significant_voxels(self) -> frozenset[str]:
        return frozenset(v for v, s in zip(self.voxel_ids, self.significant) if s)
