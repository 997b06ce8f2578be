"""Synthetic stimuli, embedding tracks and BOLD data with known ground truth.

The generator mimics the target recording setup (words every 0.5 s, 2 s
TRs) and produces BOLD as lagged-design x true-weights + i.i.d. Gaussian
noise, so every pipeline stage can be checked against a closed-form
answer.  Embedding dimensions split into an order-insensitive part (a
window-multiset statistic, untouched by scrambling) and an
``order_sensitivity`` fraction computed from within-window word order
(position-weighted mixing, decay 0.5 per position step), giving
scrambling a controllable, measurable effect on alignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import (BoldRun, EmbeddingTrack, RoiMask, StimulusTimeline, ValidationError,
                        Word, save_bold_run, save_masks, save_timeline, save_track)
from .datamodel.manifest import save_manifest_doc
from .featurize import build_lagged_design

WORD_SPACING_S = 0.5
TR_DURATION_S = 2.0
MIX_DECAY = 0.5


@dataclass
class SynthSpec:
    participants: int = 2
    runs: int = 4
    trs_per_run: int = 150
    d: int = 16
    voxels: int = 200
    lags: tuple[int, ...] = (1, 2, 3, 4, 5)
    vocab_size: int = 50
    window_size: int = 20
    true_lag_weights: np.ndarray | None = None
    noise_sigma: float = 1.0
    order_sensitivity: float = 0.0
    zero_signal_fraction: float = 0.0
    voxel_gain_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.lags = tuple(int(v) for v in self.lags)
        for name in ("participants", "runs", "trs_per_run", "d", "voxels", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not (0.0 <= self.order_sensitivity <= 1.0):
            raise ValidationError("order_sensitivity must be in [0, 1]")
        if not (0.0 <= self.zero_signal_fraction <= 1.0):
            raise ValidationError("zero_signal_fraction must be in [0, 1]")
        if self.window_size < 2:
            raise ValidationError("window_size must be >= 2")
        if self.true_lag_weights is not None:
            w = np.asarray(self.true_lag_weights, dtype=np.float64)
            if w.shape != (self.n_features, self.voxels):
                raise ValidationError(
                    f"true_lag_weights shape {w.shape}, expected {(self.n_features, self.voxels)}")
            self.true_lag_weights = w

    @property
    def n_features(self) -> int:
        return len(self.lags) * self.d

    @property
    def words_per_tr(self) -> int:
        return int(round(TR_DURATION_S / WORD_SPACING_S))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        kwargs = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "lags" in kwargs:
            kwargs["lags"] = tuple(kwargs["lags"])
        if kwargs.get("true_lag_weights") is not None:
            kwargs["true_lag_weights"] = np.asarray(kwargs["true_lag_weights"])
        return cls(**kwargs)


@dataclass
class SynthData:
    """Generated dataset plus everything needed to score the pipeline against truth."""

    spec: SynthSpec
    timeline: StimulusTimeline
    track: EmbeddingTrack
    bold_runs: dict[str, dict[int, BoldRun]]
    true_weights: np.ndarray            # (F, V)
    voxel_gains: np.ndarray             # (V,) signal scale per voxel, 0 = null voxel
    noise_ceiling: np.ndarray           # (V,) analytic corr(signal, signal + noise)
    signal: dict[int, np.ndarray] = field(default_factory=dict)  # per-run noiseless (T, V)
    voxel_ids: tuple[str, ...] = ()

    def participant_ids(self) -> list[str]:
        return sorted(self.bold_runs)


def _base_vectors(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xB0A]))
    return rng.standard_normal((spec.vocab_size, spec.d))


def _word_index(text: str) -> int:
    if not text.startswith("w"):
        raise ValidationError(f"synthetic vocabulary word expected, got {text!r}")
    return int(text[1:])


def make_timeline(spec: SynthSpec) -> StimulusTimeline:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7E7]))
    words = []
    for run in range(spec.runs):
        n_words = spec.trs_per_run * spec.words_per_tr
        idx = rng.integers(0, spec.vocab_size, size=n_words)
        for i, w in enumerate(idx):
            words.append(Word(f"w{int(w):04d}", i * WORD_SPACING_S, run))
    return StimulusTimeline(tuple(words), TR_DURATION_S,
                            tuple([spec.trs_per_run] * spec.runs))


def embeddings_for_words(spec: SynthSpec, timeline: StimulusTimeline) -> np.ndarray:
    """Per-word embeddings for any word sequence on the synthetic timeline.

    Dimensions split into an order-insensitive part (the unweighted mean
    of the window's base word vectors, invariant under any within-window
    permutation) and n_os = round(order_sensitivity * d) order-sensitive
    dimensions (position-weighted mixing with weights MIX_DECAY**|i - j|,
    normalized per row).  Scrambling a window therefore perturbs exactly
    the order-sensitive fraction of each embedding.
    """
    base = _base_vectors(spec)
    word_idx = np.array([_word_index(w.text) for w in timeline.words], dtype=np.int64)
    if word_idx.max() >= spec.vocab_size:
        raise ValidationError("word index outside the generator vocabulary")
    emb = np.empty((timeline.n_words, spec.d))
    n_os = int(round(spec.order_sensitivity * spec.d))
    for run in range(timeline.n_runs):
        run_rows = timeline.word_indices_of_run(run)
        for w0 in range(0, run_rows.size, spec.window_size):
            rows = run_rows[w0:w0 + spec.window_size]
            block = base[word_idx[rows]]                         # (w, d)
            # mean over the sorted multiset: bitwise invariant under scrambling
            sorted_block = base[np.sort(word_idx[rows])]
            emb[rows, :spec.d - n_os] = sorted_block[:, :spec.d - n_os].mean(axis=0)
            if n_os > 0:
                pos = np.arange(rows.size)
                weights = MIX_DECAY ** np.abs(pos[:, None] - pos[None, :])
                weights /= weights.sum(axis=1, keepdims=True)
                emb[rows, spec.d - n_os:] = weights @ block[:, spec.d - n_os:]
    return emb.astype(np.float32)


def _unigram_log_probs(timeline: StimulusTimeline) -> tuple[np.ndarray, np.ndarray]:
    # first word of each run has no context and carries no prediction
    texts = timeline.texts()
    counts: dict[str, int] = {}
    for t in texts:
        counts[t] = counts.get(t, 0) + 1
    total = len(texts)
    lp = np.array([np.log(counts[t] / total) for t in texts], dtype=np.float64)
    present = np.ones(len(texts), dtype=bool)
    for run in range(timeline.n_runs):
        present[timeline.word_indices_of_run(run)[0]] = False
    lp[~present] = 0.0
    return lp, present


def track_for_timeline(spec: SynthSpec, timeline: StimulusTimeline,
                       model_tag: str = "baseline",
                       scramble_tag: str = "none") -> EmbeddingTrack:
    lp, present = _unigram_log_probs(timeline)
    return EmbeddingTrack(model_tag=model_tag, scramble_tag=scramble_tag, layer=0,
                          embeddings=embeddings_for_words(spec, timeline),
                          log_probs=lp, log_prob_present=present,
                          context_window=spec.window_size)


def _padded_lagged(emb_trs: np.ndarray, timeline: StimulusTimeline,
                   lags: Sequence[int]) -> np.ndarray:
    # zero-padded lag windows for signal generation: the physical signal
    # exists from run start even where the analysis design masks rows
    design = build_lagged_design(emb_trs, timeline, lags)
    return design.data.astype(np.float64)


def make_true_weights(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (F, V) weights and the per-voxel gain profile applied to them."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xF00D]))
    W = rng.standard_normal((spec.n_features, spec.voxels)) / np.sqrt(spec.n_features)
    gains = np.ones(spec.voxels)
    if spec.voxel_gain_spread > 0:
        gains = np.exp(spec.voxel_gain_spread * rng.standard_normal(spec.voxels))
    n_zero = int(round(spec.zero_signal_fraction * spec.voxels))
    if n_zero:
        gains[rng.choice(spec.voxels, size=n_zero, replace=False)] = 0.0
    return W * gains, gains


def generate(spec: SynthSpec) -> SynthData:
    """Deterministic synthetic dataset with analytic per-voxel noise ceilings."""
    timeline = make_timeline(spec)
    track = track_for_timeline(spec, timeline)
    if spec.true_lag_weights is not None:
        W = np.asarray(spec.true_lag_weights, dtype=np.float64)
        gains = np.linalg.norm(W, axis=0)
    else:
        W, gains = make_true_weights(spec)

    from .featurize import average_words_to_trs
    emb_trs, _ = average_words_to_trs(track, timeline)
    X = _padded_lagged(emb_trs, timeline, spec.lags)

    offsets = np.concatenate([[0], np.cumsum(timeline.run_tr_counts)])
    signal = {r: X[offsets[r]:offsets[r + 1]] @ W for r in range(spec.runs)}

    # ceiling from signal variance over valid rows (where evaluation happens)
    max_lag = max(spec.lags)
    valid_signal = np.concatenate([signal[r][max_lag:] for r in range(spec.runs)], axis=0)
    s2 = valid_signal.var(axis=0)
    if spec.noise_sigma == 0:
        ceiling = (s2 > 0).astype(np.float64)
    else:
        ceiling = np.sqrt(s2 / (s2 + spec.noise_sigma ** 2))

    voxel_ids = tuple(f"v{j:04d}" for j in range(spec.voxels))
    root = np.random.SeedSequence([spec.seed, 0xB07D])
    noise_streams = root.spawn(spec.participants * spec.runs)
    bold_runs: dict[str, dict[int, BoldRun]] = {}
    for p in range(spec.participants):
        pid = f"P{p + 1:02d}"
        bold_runs[pid] = {}
        for r in range(spec.runs):
            rng = np.random.default_rng(noise_streams[p * spec.runs + r])
            data = signal[r] + spec.noise_sigma * rng.standard_normal(signal[r].shape)
            bold_runs[pid][r] = BoldRun(pid, r, data.astype(np.float32), voxel_ids)

    return SynthData(spec=spec, timeline=timeline, track=track, bold_runs=bold_runs,
                     true_weights=W, voxel_gains=gains, noise_ceiling=ceiling,
                     signal=signal, voxel_ids=voxel_ids)


def sigma_for_mean_ceiling(spec: SynthSpec, target: float) -> float:
    """Noise sigma whose mean per-voxel ceiling hits `target` (bisection)."""
    if not (0.0 < target < 1.0):
        raise ValidationError("target ceiling must be in (0, 1)")
    probe = SynthSpec(**{**spec.__dict__, "noise_sigma": 0.0, "participants": 1})
    data = generate(probe)
    max_lag = max(spec.lags)
    valid_signal = np.concatenate([data.signal[r][max_lag:] for r in range(spec.runs)], axis=0)
    s2 = valid_signal.var(axis=0)

    if s2.max() == 0:
        raise ValidationError("no signal variance; ceiling target is unreachable")

    def mean_ceiling(sigma: float) -> float:
        return float(np.sqrt(s2 / (s2 + sigma ** 2)).mean())

    lo, hi = 0.0, float(np.sqrt(s2.mean()))
    while mean_ceiling(hi) > target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_ceiling(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def default_masks(spec: SynthSpec, n_rois: int = 4) -> tuple[RoiMask, ...]:
    """Contiguous voxel-id blocks standing in for anatomical ROI masks."""
    bounds = np.linspace(0, spec.voxels, n_rois + 1).astype(int)
    return tuple(
        RoiMask(f"roi{chr(ord('A') + k)}",
                frozenset(f"v{j:04d}" for j in range(bounds[k], bounds[k + 1])))
        for k in range(n_rois))


def write_dataset(data: SynthData, out_dir, with_manifest: bool = True,
                  search: dict | None = None, alpha: float = 0.05) -> Path:
    """Write timeline/track/BOLD/masks plus a ready-to-run manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_timeline(data.timeline, out / "timeline.ekc")
    track_name = f"{data.track.model_tag}__{data.track.scramble_tag}.track.ekc"
    save_track(data.track, out / track_name)
    bold_paths: dict[str, dict[str, str]] = {}
    for pid, runs in sorted(data.bold_runs.items()):
        bold_paths[pid] = {}
        for rid, run in sorted(runs.items()):
            name = f"{pid}_run{rid}.bold.ekc"
            save_bold_run(run, out / name)
            bold_paths[pid][str(rid)] = name
    save_masks(default_masks(data.spec), out / "masks.json")

    manifest_path = out / "manifest.json"
    if with_manifest:
        doc = {
            "timeline": "timeline.ekc",
            "bold": bold_paths,
            "masks": "masks.json",
            "tracks": [{"model_tag": data.track.model_tag,
                        "scramble_tag": data.track.scramble_tag,
                        "path": track_name}],
            "lags": list(data.spec.lags),
            "search": search or {},
            "alpha": alpha,
            "seed": data.spec.seed,
            "out_dir": "out",
        }
        save_manifest_doc(doc, manifest_path)
    truth = {
        "noise_sigma": data.spec.noise_sigma,
        "mean_noise_ceiling": float(data.noise_ceiling.mean()),
        "noise_ceiling": data.noise_ceiling.tolist(),
        "voxel_gains": data.voxel_gains.tolist(),
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
