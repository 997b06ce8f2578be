"""TR-level lagged design matrices from per-word embedding tracks.

Words are averaged into their TR (down-sampling 0.5 s word presentation
to the 2 s recording rate), then each TR row concatenates the averaged
embeddings of the preceding lag TRs so a linear head can fit per-voxel
hemodynamic lag profiles.  Rows whose lag window crosses a run start are
masked invalid rather than zero-padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import (EmbeddingTrack, StimulusTimeline, ValidationError, pack_meta,
                        read_container, unpack_meta, write_container)
from .datamodel.container import META_TENSOR

DEFAULT_LAGS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class DesignMatrix:
    """Stacked per-TR feature rows for all runs of one track.

    Rows are ordered run 0 TRs, run 1 TRs, ... matching the BOLD stacking
    order; ``tr_indices`` are local to each run.  Only rows with
    ``valid == True`` participate in training and evaluation.
    """

    data: np.ndarray        # (T_total, F) f32
    run_ids: np.ndarray     # (T_total,) i64
    tr_indices: np.ndarray  # (T_total,) i64, per-run
    valid: np.ndarray       # (T_total,) bool
    lags: tuple[int, ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(v) for v in self.lags))
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] != len(self.lags) * self.d:
            raise ValidationError(
                f"design data shape {data.shape} does not match lag_count*d = "
                f"{len(self.lags) * self.d}")
        n = data.shape[0]
        for name in ("run_ids", "tr_indices", "valid"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValidationError(f"{name} must have one entry per row")
        for name, arr, dtype in (("data", data, np.float32),
                                 ("run_ids", self.run_ids, np.int64),
                                 ("tr_indices", self.tr_indices, np.int64),
                                 ("valid", self.valid, bool)):
            frozen = np.array(arr, dtype=dtype)
            frozen.setflags(write=False)
            object.__setattr__(self, name, frozen)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    @property
    def lag_count(self) -> int:
        return len(self.lags)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def rows_of_run(self, run_id: int) -> np.ndarray:
        return np.flatnonzero(self.run_ids == run_id)

    def valid_rows_of_run(self, run_id: int) -> np.ndarray:
        return np.flatnonzero((self.run_ids == run_id) & self.valid)


def average_words_to_trs(track: EmbeddingTrack,
                         timeline: StimulusTimeline) -> tuple[np.ndarray, np.ndarray]:
    """Average word embeddings into their TR.

    A word with onset t (seconds from its run start) belongs to the TR
    with half-open span [k*TR, (k+1)*TR); onsets exactly on a boundary go
    to the later TR.  TRs with no words get a zero row.

    Parameters
    ----------
    track : EmbeddingTrack
        Per-word embeddings aligned to `timeline` (equal word counts).
    timeline : StimulusTimeline
        Word onsets, run structure and TR duration.

    Returns
    -------
    tr_embeddings : (total_trs, d) float32
        Mean embedding per TR, rows stacked run by run.
    word_counts : (total_trs,) int64
        Number of words averaged into each TR.
    """
    track.check_matches(timeline)
    tr = timeline.tr_duration_s
    offsets = timeline.run_row_offsets()
    run_ids = np.array([w.run_id for w in timeline.words], dtype=np.int64)
    onsets = np.array([w.onset_s for w in timeline.words], dtype=np.float64)
    local_tr = np.floor(onsets / tr).astype(np.int64)
    rows = offsets[run_ids] + local_tr

    total = timeline.total_trs
    sums = np.zeros((total, track.d), dtype=np.float64)
    counts = np.zeros(total, dtype=np.int64)
    np.add.at(sums, rows, track.embeddings.astype(np.float64))
    np.add.at(counts, rows, 1)
    nonzero = counts > 0
    sums[nonzero] /= counts[nonzero, None]
    return sums.astype(np.float32), counts


def build_lagged_design(tr_embeddings: np.ndarray,
                        timeline: StimulusTimeline,
                        lags: Sequence[int] = DEFAULT_LAGS) -> DesignMatrix:
    """Concatenate lagged TR embeddings into prediction-head input rows.

    Row t holds tr_embeddings[t - lags[0]], ..., tr_embeddings[t - lags[-1]]
    restricted to t's own run; rows where any lag would cross the run
    start are marked invalid.

    Raises
    ------
    ValidationError
        Empty or non-increasing lags, lags < 1, embedding row count not
        matching the timeline, or max(lags) >= the shortest run length
        (which would leave a run with no valid rows).
    """
    lags = tuple(int(v) for v in lags)
    if not lags:
        raise ValidationError("lags must be non-empty")
    if any(l < 1 for l in lags) or list(lags) != sorted(set(lags)):
        raise ValidationError(f"lags must be strictly increasing and >= 1, got {lags}")
    emb = np.asarray(tr_embeddings, dtype=np.float32)
    if emb.ndim != 2 or emb.shape[0] != timeline.total_trs:
        raise ValidationError(
            f"tr_embeddings shape {emb.shape} does not cover {timeline.total_trs} TRs")
    max_lag = max(lags)
    if max_lag >= min(timeline.run_tr_counts):
        raise ValidationError(
            f"max lag {max_lag} >= shortest run length {min(timeline.run_tr_counts)}: "
            "that run would have no valid rows")

    d = emb.shape[1]
    total = timeline.total_trs
    data = np.zeros((total, len(lags) * d), dtype=np.float32)
    run_ids = np.empty(total, dtype=np.int64)
    tr_indices = np.empty(total, dtype=np.int64)
    valid = np.zeros(total, dtype=bool)

    offset = 0
    for run_id, n_trs in enumerate(timeline.run_tr_counts):
        block = emb[offset:offset + n_trs]
        rows = slice(offset, offset + n_trs)
        run_ids[rows] = run_id
        tr_indices[rows] = np.arange(n_trs)
        valid[offset + max_lag:offset + n_trs] = True
        for k, lag in enumerate(lags):
            cols = slice(k * d, (k + 1) * d)
            data[offset + lag:offset + n_trs, cols] = block[:n_trs - lag]
        # rows with t < max_lag keep zeros but are invalid, never trained on
        data[offset:offset + max_lag] = 0.0
        offset += n_trs

    return DesignMatrix(data=data, run_ids=run_ids, tr_indices=tr_indices,
                        valid=valid, lags=lags, d=d)


def featurize_track(track: EmbeddingTrack, timeline: StimulusTimeline,
                    lags: Sequence[int] = DEFAULT_LAGS) -> DesignMatrix:
    """average_words_to_trs followed by build_lagged_design."""
    tr_emb, _ = average_words_to_trs(track, timeline)
    return build_lagged_design(tr_emb, timeline, lags)


def save_design(design: DesignMatrix, path) -> None:
    write_container({
        "data": design.data,
        "run_ids": design.run_ids,
        "tr_indices": design.tr_indices,
        "valid": design.valid.astype(np.uint8),
        META_TENSOR: pack_meta({"kind": "design", "lags": list(design.lags), "d": design.d}),
    }, path)


def load_design(path) -> DesignMatrix:
    t = read_container(path)
    meta = unpack_meta(t[META_TENSOR])
    if meta.get("kind") != "design":
        raise ValidationError(f"expected a design container, found {meta.get('kind')!r}")
    return DesignMatrix(data=t["data"], run_ids=t["run_ids"], tr_indices=t["tr_indices"],
                        valid=t["valid"].astype(bool), lags=tuple(meta["lags"]),
                        d=int(meta["d"]))
