"""Voxelwise alignment statistics, FDR control, and ROI contrasts.

Significance is assessed per participant: each voxel's per-fold heldout
correlations go through a one-sample t-test against zero (one-sided,
greater; negative alignment is not "significantly predicted") and the
resulting p-values are Benjamini-Hochberg corrected across voxels.
ROI contrasts aggregate fold-averaged per-voxel correlations to a mean
percent change per participant, then mean and SEM across participants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .datamodel import AlignmentReport, ReportMeta, RoiMask, ValidationError, check_mask_set

SELECTION_REFERENCE = "significant_by_reference"
SELECTION_ALL = "all"
_SELECTIONS = (SELECTION_REFERENCE, SELECTION_ALL)

# |denominator| below this is treated as zero and the voxel is excluded
# from ratio statistics (counted in the output)
RATIO_FLOOR = 1e-6


def pearson(x, y) -> float:
    """Sample Pearson correlation; NaN when either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError(f"pearson needs two equal-length vectors of >= 2, got {x.shape} {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return float("nan")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def pearson_columns(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Column-wise Pearson correlation of two (n, V) matrices; NaN where undefined."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[0] < 2:
        raise ValidationError(f"need matching (n>=2, V) matrices, got {pred.shape} {target.shape}")
    pc = pred - pred.mean(axis=0)
    tc = target - target.mean(axis=0)
    denom = np.sqrt((pc * pc).sum(axis=0) * (tc * tc).sum(axis=0))
    out = np.full(pred.shape[1], np.nan)
    ok = denom > 0
    out[ok] = (pc * tc).sum(axis=0)[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0, out=out)


def benjamini_hochberg(p, alpha: float) -> tuple[np.ndarray, float]:
    """Classic step-up FDR procedure.

    Sorts p ascending, finds the largest k with p_(k) <= k*alpha/m and
    rejects every hypothesis with p <= p_(k).

    Returns
    -------
    reject : bool array aligned with the input
    threshold : float
        p_(k) of the last rejected hypothesis, 0.0 when nothing is rejected.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValidationError("benjamini_hochberg needs at least one p-value")
    if not (0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValidationError("p-values must be finite and in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    below = np.flatnonzero(ranked <= (np.arange(1, m + 1) * alpha / m))
    if below.size == 0:
        return np.zeros(m, dtype=bool), 0.0
    threshold = float(ranked[below[-1]])
    return p <= threshold, threshold


def one_sample_t_greater(values: np.ndarray) -> float:
    """One-sample t-test p-value against mean 0, one-sided (greater).

    A zero-variance sample is the t-statistic's limit case: p = 0 when the
    common value is positive, else p = 1.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValidationError("t-test needs at least 2 values")
    sd = v.std(ddof=1)
    if sd == 0.0:
        return 0.0 if v[0] > 0 else 1.0
    t = v.mean() / (sd / np.sqrt(v.size))
    return float(sps.t.sf(t, v.size - 1))


def voxel_significance(fold_correlations: np.ndarray,
                       voxel_ids: Sequence[str],
                       alpha: float,
                       *,
                       participant_id: str,
                       model_tag: str,
                       scramble_tag: str = "none",
                       folds: Sequence[int] = ()) -> AlignmentReport:
    """Build an AlignmentReport from one participant's (V, K) fold correlations.

    Voxels with fewer than 2 finite fold values are excluded from testing
    and flagged (NaN correlation and p-value, never significant); the
    remaining p-values go through Benjamini-Hochberg at `alpha`.
    """
    corr = np.asarray(fold_correlations, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[1] < 2:
        raise ValidationError(f"need a (V, K>=2) fold-correlation matrix, got {corr.shape}")
    if len(voxel_ids) != corr.shape[0]:
        raise ValidationError("voxel_ids length must match the matrix rows")
    if not (0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")

    n_vox = corr.shape[0]
    finite = np.isfinite(corr)
    counts = finite.sum(axis=1)
    mean_corr = np.full(n_vox, np.nan)
    p_values = np.full(n_vox, np.nan)

    usable = counts >= 2
    vals = np.where(finite, corr, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = vals.sum(axis=1) / counts
        ssq = ((vals - np.where(finite, means[:, None], 0.0)) ** 2 * finite).sum(axis=1)
        sd = np.sqrt(ssq / np.maximum(counts - 1, 1))
    mean_corr[usable] = means[usable]

    zero_var = usable & (sd == 0.0)
    p_values[zero_var] = np.where(means[zero_var] > 0, 0.0, 1.0)
    regular = usable & (sd > 0.0)
    if regular.any():
        t = means[regular] / (sd[regular] / np.sqrt(counts[regular]))
        p_values[regular] = sps.t.sf(t, counts[regular] - 1)

    tested = np.isfinite(p_values)
    significant = np.zeros(n_vox, dtype=bool)
    threshold = 0.0
    if tested.any():
        reject, threshold = benjamini_hochberg(p_values[tested], alpha)
        significant[tested] = reject

    folds = tuple(folds) if folds else tuple(range(corr.shape[1]))
    meta = ReportMeta(participant_id=participant_id, model_tag=model_tag,
                      scramble_tag=scramble_tag, folds=folds, alpha=alpha,
                      bh_threshold=threshold, n_undefined=int((~tested).sum()))
    return AlignmentReport(voxel_ids=tuple(voxel_ids), correlations=mean_corr,
                           p_values=p_values, significant=significant, meta=meta)


@dataclass(frozen=True)
class RoiContrast:
    roi_name: str
    mean_percent_change: float  # NaN when no participant contributed
    sem: float
    n_participants: int
    n_voxels: int               # selected voxels summed over participants
    n_excluded: int             # selected voxels dropped for a near-zero denominator

    def __post_init__(self):
        if np.isfinite(self.sem) and self.sem < 0:
            raise ValidationError("sem must be >= 0")


@dataclass(frozen=True)
class ContrastResult:
    rows: tuple[RoiContrast, ...]
    reference_model_tag: str
    voxel_selection: str


def _check_selection(selection: str) -> None:
    if selection not in _SELECTIONS:
        raise ValidationError(f"voxel_selection must be one of {_SELECTIONS}, got {selection!r}")


def _by_participant(reports: Sequence[AlignmentReport]) -> dict[str, AlignmentReport]:
    out: dict[str, AlignmentReport] = {}
    for r in reports:
        pid = r.meta.participant_id
        if pid in out:
            raise ValidationError(f"two reports for participant {pid}")
        out[pid] = r
    return out


def _paired(reports_a, reports_b) -> list[tuple[str, AlignmentReport, AlignmentReport]]:
    a = _by_participant(reports_a)
    b = _by_participant(reports_b)
    if set(a) != set(b):
        raise ValidationError(f"participant sets differ: {sorted(a)} vs {sorted(b)}")
    pairs = []
    for pid in sorted(a):
        if a[pid].voxel_ids != b[pid].voxel_ids:
            raise ValidationError(f"participant {pid}: reports do not share a voxel universe")
        pairs.append((pid, a[pid], b[pid]))
    return pairs


def _selected(mask: RoiMask, reference: AlignmentReport, selection: str) -> list[int]:
    idx = [i for i, v in enumerate(reference.voxel_ids) if v in mask.voxel_ids]
    if selection == SELECTION_REFERENCE:
        idx = [i for i in idx if reference.significant[i]]
    return idx


def _across_participants(per_participant: list[float]) -> tuple[float, float, int]:
    vals = np.array(per_participant, dtype=np.float64)
    n = vals.size
    if n == 0:
        return float("nan"), float("nan"), 0
    mean = float(vals.mean())
    sem = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, sem, n


def roi_percent_change(reports_a: Sequence[AlignmentReport],
                       reports_b: Sequence[AlignmentReport],
                       masks: Sequence[RoiMask],
                       selection: str = SELECTION_REFERENCE) -> ContrastResult:
    """Per-ROI mean percent change of model a's alignment over model b's.

    For each participant and ROI the per-voxel change 100*(a - b)/b is
    averaged over selected voxels (fold-averaged correlations); the table
    reports mean and SEM of those participant means.  The reference for
    ``significant_by_reference`` selection is report a.  Voxels with
    |b| < 1e-6 are excluded from the ratio and counted.
    """
    _check_selection(selection)
    check_mask_set(masks)
    pairs = _paired(reports_a, reports_b)
    ref_tag = pairs[0][1].meta.model_tag

    rows = []
    for mask in masks:
        per_participant = []
        n_voxels = 0
        n_excluded = 0
        for _pid, ra, rb in pairs:
            idx = _selected(mask, ra, selection)
            ca = ra.correlations[idx]
            cb = rb.correlations[idx]
            ok = np.isfinite(ca) & np.isfinite(cb) & (np.abs(cb) >= RATIO_FLOOR)
            n_voxels += len(idx)
            n_excluded += int(len(idx) - ok.sum())
            if ok.any():
                pct = 100.0 * (ca[ok] - cb[ok]) / cb[ok]
                per_participant.append(float(pct.mean()))
        mean, sem, n = _across_participants(per_participant)
        rows.append(RoiContrast(mask.name, mean, sem, n, n_voxels, n_excluded))
    return ContrastResult(tuple(rows), reference_model_tag=ref_tag, voxel_selection=selection)


def cross_perturbation_contrast(reports_base: Sequence[AlignmentReport],
                                reports_base_scr: Sequence[AlignmentReport],
                                reports_tuned: Sequence[AlignmentReport],
                                reports_tuned_scr: Sequence[AlignmentReport],
                                masks: Sequence[RoiMask],
                                selection: str = SELECTION_REFERENCE,
                                ) -> tuple[dict[str, tuple[tuple[str, ...], np.ndarray]], ContrastResult]:
    """Contrast the two scrambling drops: (tuned - tuned_scr) - (base - base_scr).

    Positive delta at a voxel means the stimulus-tuned advantage persists
    after controlling for next-word prediction and word-level semantics.

    Returns the per-voxel delta map per participant plus an ROI table of
    the percent change of the tuned drop over the base drop, restricted
    (by default) to voxels significantly predicted by the stimulus-tuned
    model, with near-zero base drops excluded from the ratio and counted.
    """
    _check_selection(selection)
    check_mask_set(masks)
    pairs_b = _paired(reports_base, reports_base_scr)
    pairs_t = _paired(reports_tuned, reports_tuned_scr)
    if [p[0] for p in pairs_b] != [p[0] for p in pairs_t]:
        raise ValidationError("the four report sets must cover the same participants")

    delta_maps: dict[str, tuple[tuple[str, ...], np.ndarray]] = {}
    contrast_t: dict[str, np.ndarray] = {}
    contrast_b: dict[str, np.ndarray] = {}
    reference: dict[str, AlignmentReport] = {}
    for (pid, rb, rbs), (_, rt, rts) in zip(pairs_b, pairs_t):
        if rb.voxel_ids != rt.voxel_ids:
            raise ValidationError(f"participant {pid}: reports do not share a voxel universe")
        ct = rt.correlations - rts.correlations
        cb = rb.correlations - rbs.correlations
        delta_maps[pid] = (rt.voxel_ids, ct - cb)
        contrast_t[pid] = ct
        contrast_b[pid] = cb
        reference[pid] = rt

    rows = []
    for mask in masks:
        per_participant = []
        n_voxels = 0
        n_excluded = 0
        for pid in sorted(reference):
            idx = _selected(mask, reference[pid], selection)
            ct = contrast_t[pid][idx]
            cb = contrast_b[pid][idx]
            ok = np.isfinite(ct) & np.isfinite(cb) & (np.abs(cb) >= RATIO_FLOOR)
            n_voxels += len(idx)
            n_excluded += int(len(idx) - ok.sum())
            if ok.any():
                pct = 100.0 * (ct[ok] - cb[ok]) / cb[ok]
                per_participant.append(float(pct.mean()))
        mean, sem, n = _across_participants(per_participant)
        rows.append(RoiContrast(mask.name, mean, sem, n, n_voxels, n_excluded))
    ref_tag = next(iter(reference.values())).meta.model_tag if reference else ""
    return delta_maps, ContrastResult(tuple(rows), reference_model_tag=ref_tag,
                                      voxel_selection=selection)
