"""Linear prediction heads: training, hyperparameter search, inference.

One head per (participant, heldout run) fold maps lagged TR embeddings to
all voxels jointly under a single MSE objective.  Training uses AdamW
(decoupled weight decay, applied to weights only) with a per-step linear
learning-rate decay to zero and early stopping on validation loss.
Hyperparameters come from a seeded random search scored by the skewness
of the validation voxel-correlation distribution; the winner is retrained
on every valid row of the training runs (train + validation) for its
early-stopped epoch count.

Determinism: every random draw is derived from (seed, trial index) via
numpy SeedSequence, so results do not depend on execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .datamodel import (BoldRun, EncodingModel, Hyperparameters, Provenance, ValidationError,
                        check_run_set)
from .featurize import DesignMatrix
from .stats import pearson_columns

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrialDivergence(RuntimeError):
    """Training produced a non-finite loss; the trial is failed, not fatal."""


class SearchFailure(RuntimeError):
    """Every trial of a random search failed."""

    def __init__(self, message: str, trials: list["TrialRecord"]):
        super().__init__(message)
        self.trials = trials


@dataclass(frozen=True)
class FoldSpec:
    """One (participant, heldout run) train/evaluate split.

    The validation set is the final contiguous `validation_fraction` of
    each training run's valid rows; training rows within max(lags) TRs of
    a validation block are dropped to avoid leakage through the lag
    window.
    """

    participant_id: str
    heldout_run: int
    train_runs: tuple[int, ...]
    validation_fraction: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "train_runs", tuple(int(r) for r in self.train_runs))
        if self.heldout_run in self.train_runs:
            raise ValidationError(f"heldout run {self.heldout_run} is also a training run")
        if not self.train_runs:
            raise ValidationError("fold needs at least one training run")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValidationError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}")

    def check_covers(self, n_runs: int) -> None:
        covered = sorted((*self.train_runs, self.heldout_run))
        if covered != list(range(n_runs)):
            raise ValidationError(f"fold covers runs {covered}, expected 0..{n_runs - 1}")


def make_folds(participant_id: str, n_runs: int,
               validation_fraction: float = 0.10) -> list[FoldSpec]:
    """All leave-one-run-out folds for one participant (R folds for R runs)."""
    if n_runs < 2:
        raise ValidationError("need at least 2 runs to hold one out")
    return [FoldSpec(participant_id, heldout,
                     tuple(r for r in range(n_runs) if r != heldout),
                     validation_fraction)
            for heldout in range(n_runs)]


@dataclass(frozen=True)
class RowSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def split_rows(design: DesignMatrix, fold: FoldSpec) -> RowSplit:
    """Deterministic train/validation/test row indices for one fold."""
    gap = max(design.lags)
    train_parts, val_parts = [], []
    for run in fold.train_runs:
        rows = design.valid_rows_of_run(run)
        if rows.size == 0:
            raise ValidationError(f"run {run} has no valid rows")
        n_val = max(1, int(math.floor(fold.validation_fraction * rows.size)))
        if n_val >= rows.size:
            raise ValidationError(f"run {run}: validation carve-out leaves no training rows")
        val_parts.append(rows[-n_val:])
        train_parts.append(rows[:max(0, rows.size - n_val - gap)])
    train = np.concatenate(train_parts)
    if train.size == 0:
        raise ValidationError("no training rows left after validation carve-out")
    return RowSplit(train=train,
                    validation=np.concatenate(val_parts),
                    test=design.valid_rows_of_run(fold.heldout_run))


@dataclass
class SearchSpace:
    """Random-search ranges: log-uniform learning rate, uniform weight decay.

    `selection` scores trials on their validation voxel correlations:
    "skew" (default) maximizes the distribution's skewness, rewarding a
    tail of well-predicted voxels; "mean_correlation" maximizes the mean,
    which is more robust when most voxels carry signal.
    """

    lr_min: float = 1e-6
    lr_max: float = 1e-2
    wd_min: float = 0.0
    wd_max: float = 1e-5
    max_epochs: int = 40
    trials: int = 100
    batch_size: int = 32
    patience: int = 3
    selection: str = "skew"

    def __post_init__(self):
        if not (0 < self.lr_min <= self.lr_max):
            raise ValidationError(f"bad learning-rate range [{self.lr_min}, {self.lr_max}]")
        if not (0 <= self.wd_min <= self.wd_max):
            raise ValidationError(f"bad weight-decay range [{self.wd_min}, {self.wd_max}]")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValidationError("max_epochs, batch_size and patience must be >= 1")
        if self.selection not in ("skew", "mean_correlation"):
            raise ValidationError(f"unknown selection criterion {self.selection!r}")

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        lr = float(np.exp(rng.uniform(np.log(self.lr_min), np.log(self.lr_max))))
        wd = float(rng.uniform(self.wd_min, self.wd_max))
        return lr, wd

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchSpace":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    weight_norm: float


@dataclass
class TrainResult:
    model: EncodingModel
    epochs: list[EpochStats]
    best_epoch: int
    val_correlations: np.ndarray | None = None


def stack_targets(design: DesignMatrix, bold_runs: Sequence[BoldRun]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Stack one participant's runs into a (T_total, V) target matrix in design row order."""
    voxel_ids = check_run_set(bold_runs)
    by_run = {r.run_id: r for r in bold_runs}
    blocks = []
    for run_id in sorted(by_run):
        rows = design.rows_of_run(run_id)
        run = by_run[run_id]
        if rows.size != run.n_trs:
            raise ValidationError(
                f"run {run_id}: design has {rows.size} rows, BOLD has {run.n_trs} TRs")
        blocks.append(run.data)
    expected_runs = sorted(set(design.run_ids.tolist()))
    if sorted(by_run) != expected_runs:
        raise ValidationError(f"BOLD runs {sorted(by_run)} do not cover design runs {expected_runs}")
    return np.concatenate(blocks, axis=0).astype(np.float64), voxel_ids


def mse_loss_and_grads(W: np.ndarray, b: np.ndarray, X: np.ndarray,
                       Y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared error over all entries and its analytic gradients."""
    err = X @ W + b - Y
    n = err.size
    loss = float((err * err).sum() / n)
    grad_W = (2.0 / n) * (X.T @ err)
    grad_b = (2.0 / n) * err.sum(axis=0)
    return loss, grad_W, grad_b


def _fit(X_train: np.ndarray, Y_train: np.ndarray, lr: float, wd: float, seed: int,
         max_epochs: int, batch_size: int, patience: int,
         X_val: np.ndarray | None = None, Y_val: np.ndarray | None = None,
         schedule_epochs: int | None = None,
         ) -> tuple[np.ndarray, np.ndarray, list[EpochStats], int]:
    """AdamW minibatch training loop; returns best-epoch weights.

    Without a validation set, runs exactly max_epochs epochs (the retrain
    path); with one, early-stops after `patience` epochs without a strict
    validation-loss improvement and returns the best epoch's snapshot.
    `schedule_epochs` stretches the linear decay beyond the epochs
    actually run, so a retrain can reproduce an early-stopped trial's
    trajectory.
    """
    n, n_feat = X_train.shape
    n_vox = Y_train.shape[1]
    rng = np.random.default_rng(seed)
    W = np.zeros((n_feat, n_vox))
    b = np.zeros(n_vox)
    mW = np.zeros_like(W); vW = np.zeros_like(W)
    mb = np.zeros_like(b); vb = np.zeros_like(b)

    n_batches = max(1, math.ceil(n / batch_size))
    total_steps = max(max_epochs, schedule_epochs or 0) * n_batches
    step = 0
    history: list[EpochStats] = []
    best = (math.inf, 0, W.copy(), b.copy())  # (val_loss, epoch, W, b)
    stale = 0

    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb, Yb = X_train[idx], Y_train[idx]
            loss, gW, gb = mse_loss_and_grads(W, b, Xb, Yb)
            if not math.isfinite(loss):
                raise TrialDivergence(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(idx)
            lr_t = lr * (1.0 - step / total_steps)
            step += 1
            mW = ADAM_BETA1 * mW + (1 - ADAM_BETA1) * gW
            vW = ADAM_BETA2 * vW + (1 - ADAM_BETA2) * gW * gW
            mb = ADAM_BETA1 * mb + (1 - ADAM_BETA1) * gb
            vb = ADAM_BETA2 * vb + (1 - ADAM_BETA2) * gb * gb
            c1 = 1 - ADAM_BETA1 ** step
            c2 = 1 - ADAM_BETA2 ** step
            # decoupled decay on weights only, scheduled with the same lr
            W -= lr_t * ((mW / c1) / (np.sqrt(vW / c2) + ADAM_EPS) + wd * W)
            b -= lr_t * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS)
        epoch_loss /= n

        if X_val is not None:
            err = X_val @ W + b - Y_val
            val_loss = float((err * err).sum() / err.size)
            if not math.isfinite(val_loss):
                raise TrialDivergence(f"non-finite validation loss at epoch {epoch}")
        else:
            val_loss = math.nan
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss,
                                  weight_norm=float(np.linalg.norm(W))))
        if X_val is None:
            best = (val_loss, epoch, W.copy(), b.copy())
            continue
        if val_loss < best[0]:
            best = (val_loss, epoch, W.copy(), b.copy())
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break

    _, best_epoch, W_best, b_best = best
    return W_best, b_best, history, best_epoch


def train_head(design: DesignMatrix, bold_runs: Sequence[BoldRun], fold: FoldSpec,
               lr: float, wd: float, seed: int, *,
               max_epochs: int = 40, batch_size: int = 32, patience: int = 3,
               provenance: Provenance | None = None,
               rows: np.ndarray | None = None, use_validation: bool = True,
               schedule_epochs: int | None = None) -> TrainResult:
    """Train one fold's prediction head with fixed hyperparameters.

    `rows`/`use_validation` support the search's retrain path: passing
    explicit training rows with use_validation=False runs exactly
    `max_epochs` epochs on those rows with no early stopping.
    """
    Y_all, voxel_ids = stack_targets(design, bold_runs)
    split = split_rows(design, fold)
    X = design.data.astype(np.float64)
    if rows is None:
        train_rows = split.train
    else:
        train_rows = np.asarray(rows, dtype=np.int64)
    if use_validation:
        X_val, Y_val = X[split.validation], Y_all[split.validation]
    else:
        X_val = Y_val = None
    W, b, history, best_epoch = _fit(
        X[train_rows], Y_all[train_rows], lr, wd, seed,
        max_epochs=max_epochs, batch_size=batch_size, patience=patience,
        X_val=X_val, Y_val=Y_val, schedule_epochs=schedule_epochs)

    model = EncodingModel(
        participant_id=fold.participant_id,
        heldout_run=fold.heldout_run,
        weights=W.astype(np.float32),
        bias=b.astype(np.float32),
        hyperparameters=Hyperparameters(lr, wd, best_epoch),
        provenance=provenance or Provenance(seed=seed),
    )
    val_corr = None
    if use_validation:
        pred = X[split.validation] @ W + b
        val_corr = pearson_columns(pred, Y_all[split.validation])
    return TrainResult(model=model, epochs=history, best_epoch=best_epoch,
                       val_correlations=val_corr)


def select_by_skew(validation_correlations: np.ndarray) -> float:
    """Adjusted Fisher-Pearson sample skewness of the voxel-correlation distribution.

    Model selection maximizes this: a right tail of well-predicted voxels
    beats a uniformly mediocre fit whose MSE may nonetheless be lower.
    Returns NaN for a zero-variance sample (the trial ranks last).
    """
    vals = np.asarray(validation_correlations, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    n = vals.size
    if n < 3:
        raise ValidationError(f"skew needs >= 3 finite correlations, got {n}")
    centered = vals - vals.mean()
    m2 = float((centered ** 2).mean())
    if m2 == 0.0:
        return float("nan")
    m3 = float((centered ** 3).mean())
    g1 = m3 / m2 ** 1.5
    return g1 * math.sqrt(n * (n - 1)) / (n - 2)


@dataclass
class TrialRecord:
    index: int
    learning_rate: float
    weight_decay: float
    epochs_trained: int
    skew: float
    score: float
    best_val_loss: float
    status: str  # ok | diverged | undefined_score

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    model: EncodingModel
    trials: list[TrialRecord]
    winner_index: int

    def trial_log(self) -> list[dict]:
        return [t.to_json() for t in self.trials]


def random_search(design: DesignMatrix, bold_runs: Sequence[BoldRun], fold: FoldSpec,
                  space: SearchSpace, seed: int,
                  provenance: Provenance | None = None) -> SearchResult:
    """Seeded random hyperparameter search with winner retraining.

    All (lr, wd, trial seed) triples are drawn up front so trial i is a
    pure function of (seed, i); trials are scored on validation voxel
    correlations per space.selection and the winner (highest score, ties
    to the lower index) is retrained on every valid row of the training
    runs for its early-stopped epoch count, keeping the trial's lr
    schedule.
    """
    root = np.random.SeedSequence(seed)
    sampler = np.random.default_rng(root.spawn(1)[0])
    draws = [space.sample(sampler) for _ in range(space.trials)]
    trial_seeds = sampler.integers(0, 2 ** 63 - 1, size=space.trials + 1)

    provenance = provenance or Provenance(seed=seed)
    trials: list[TrialRecord] = []
    for i, (lr, wd) in enumerate(draws):
        try:
            res = train_head(design, bold_runs, fold, lr, wd, int(trial_seeds[i]),
                             max_epochs=space.max_epochs, batch_size=space.batch_size,
                             patience=space.patience, provenance=provenance)
        except TrialDivergence:
            trials.append(TrialRecord(i, lr, wd, 0, float("nan"), float("nan"),
                                      float("nan"), "diverged"))
            continue
        finite = np.isfinite(res.val_correlations)
        skew = float("nan")
        score = float("nan")
        status = "undefined_score"
        if finite.sum() >= 3:
            skew = select_by_skew(res.val_correlations[finite])
            score = skew if space.selection == "skew" else float(
                res.val_correlations[finite].mean())
            if math.isfinite(score):
                status = "ok"
        best_val = res.epochs[res.best_epoch - 1].val_loss if res.epochs else float("nan")
        trials.append(TrialRecord(i, lr, wd, res.best_epoch, skew, score, best_val, status))

    scored = [(t.score, t.index) for t in trials if t.status == "ok"]
    if not scored:
        raise SearchFailure("all trials failed or had an undefined score", trials)
    winner_idx = max(scored, key=lambda s: (s[0], -s[1]))[1]
    winner = trials[winner_idx]

    retrain_rows = np.concatenate([design.valid_rows_of_run(r) for r in fold.train_runs])
    final = train_head(design, bold_runs, fold,
                       winner.learning_rate, winner.weight_decay, int(trial_seeds[-1]),
                       max_epochs=max(1, winner.epochs_trained),
                       batch_size=space.batch_size, patience=space.patience,
                       provenance=provenance, rows=retrain_rows, use_validation=False,
                       schedule_epochs=space.max_epochs)
    return SearchResult(model=final.model, trials=trials, winner_index=winner_idx)


def predict(model: EncodingModel, design: DesignMatrix,
            run_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Predictions X @ W + b over the valid rows of one run (default: the heldout run).

    Returns (predictions, global row indices).
    """
    if design.n_features != model.n_features:
        raise ValidationError(
            f"design has {design.n_features} features, model expects {model.n_features}")
    run = model.heldout_run if run_id is None else run_id
    rows = design.valid_rows_of_run(run)
    if rows.size == 0:
        raise ValidationError(f"run {run} has no valid rows to predict")
    X = design.data[rows].astype(np.float64)
    yhat = X @ model.weights.astype(np.float64) + model.bias.astype(np.float64)
    return yhat, rows


def evaluate_fold(model: EncodingModel, design: DesignMatrix,
                  bold_runs: Sequence[BoldRun]) -> np.ndarray:
    """Per-voxel heldout correlation of one fold's model (NaN where undefined)."""
    Y_all, _ = stack_targets(design, bold_runs)
    yhat, rows = predict(model, design)
    return pearson_columns(yhat, Y_all[rows])


def save_trial_log(result: SearchResult, path) -> None:
    doc = {"winner_index": result.winner_index, "trials": result.trial_log()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
