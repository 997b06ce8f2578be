"""Stimulus-tuning: fine-tune a causal LM on held-in stimulus text.

Training samples are non-overlapping sequences of consecutive words
(default 80); hyperparameters (learning rate, weight decay, epoch count)
come from a seeded random search with AdamW, a linear learning-rate decay
to zero and early stopping on validation loss, and the winning
configuration is retrained with the validation sequences folded back in.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .tracks import FinetuneSettings


@dataclass
class TuneTrial:
    index: int
    learning_rate: float
    weight_decay: float
    epochs_trained: int
    best_val_loss: float
    status: str  # ok | diverged


@dataclass
class TuneResult:
    checkpoint_dir: str
    trials: list[TuneTrial]
    winner_index: int

    def trial_log(self) -> list[dict]:
        return [asdict(t) for t in self.trials]


def _sequences(tokenizer, text: str, seq_len_words: int) -> list[list[int]]:
    words = text.split()
    chunks = [words[i:i + seq_len_words] for i in range(0, len(words), seq_len_words)]
    chunks = [c for c in chunks if len(c) == seq_len_words]
    if len(chunks) < 2:
        raise ValueError(
            f"need at least 2 non-overlapping {seq_len_words}-word sequences, "
            f"got {len(chunks)} from {len(words)} words")
    return [tokenizer.encode(" ".join(c), add_special_tokens=False) for c in chunks]


def _batches(sequences: list[list[int]], order: np.ndarray, batch_size: int, pad_id: int):
    for start in range(0, len(order), batch_size):
        chosen = [sequences[i] for i in order[start:start + batch_size]]
        width = max(len(s) for s in chosen)
        ids = torch.full((len(chosen), width), pad_id, dtype=torch.long)
        mask = torch.zeros((len(chosen), width), dtype=torch.long)
        labels = torch.full((len(chosen), width), -100, dtype=torch.long)
        for row, seq in enumerate(chosen):
            ids[row, :len(seq)] = torch.tensor(seq, dtype=torch.long)
            mask[row, :len(seq)] = 1
            labels[row, :len(seq)] = ids[row, :len(seq)]
        yield ids, mask, labels


@torch.no_grad()
def _eval_loss(model, sequences, batch_size: int, pad_id: int) -> float:
    model.eval()
    total, count = 0.0, 0
    order = np.arange(len(sequences))
    for ids, mask, labels in _batches(sequences, order, batch_size, pad_id):
        out = model(input_ids=ids, attention_mask=mask, labels=labels)
        n = int((labels != -100).sum())
        total += float(out.loss) * n
        count += n
    return total / count


def _fit_lm(model, train_seqs, val_seqs, lr: float, wd: float, settings: FinetuneSettings,
            seed: int, pad_id: int, epochs_override: int | None = None) -> tuple[int, float]:
    """Train in place; restores the best-validation epoch's weights.

    Returns (epochs_trained, best val loss).  With epochs_override the loop
    runs exactly that many epochs, keeps the trial's 40-epoch schedule, and
    skips validation (the retrain path).
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=wd)
    n_batches = math.ceil(len(train_seqs) / settings.batch_size)
    schedule_epochs = settings.max_epochs
    total_steps = schedule_epochs * n_batches
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / total_steps))
    run_epochs = epochs_override if epochs_override is not None else settings.max_epochs

    best = (math.inf, 0, None)
    stale = 0
    for epoch in range(1, run_epochs + 1):
        model.train()
        order = rng.permutation(len(train_seqs))
        for ids, mask, labels in _batches(train_seqs, order, settings.batch_size, pad_id):
            optimizer.zero_grad()
            out = model(input_ids=ids, attention_mask=mask, labels=labels)
            if not math.isfinite(float(out.loss.detach())):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            out.loss.backward()
            optimizer.step()
            scheduler.step()
        if epochs_override is not None:
            continue
        val = _eval_loss(model, val_seqs, settings.batch_size, pad_id)
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        if val < best[0]:
            best = (val, epoch, copy.deepcopy(model.state_dict()))
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    if epochs_override is not None:
        return run_epochs, math.nan
    val_loss, epoch, state = best
    if state is not None:
        model.load_state_dict(state)
    return epoch, val_loss


def stimulus_tune(model, tokenizer, training_text: str, out_dir,
                  settings: FinetuneSettings | None = None) -> TuneResult:
    """Random-search fine-tuning on non-overlapping word sequences.

    The model passed in is the baseline; every trial restarts from its
    weights.  The tuned checkpoint and trial log land in `out_dir`.
    """
    settings = settings or FinetuneSettings()
    pad_id = tokenizer.pad_token_id
    if pad_id is None:
        pad_id = tokenizer.eos_token_id or 0
    sequences = _sequences(tokenizer, training_text, settings.sequence_length)
    n_val = max(1, int(settings.validation_fraction * len(sequences)))
    train_seqs, val_seqs = sequences[:-n_val], sequences[-n_val:]

    base_state = copy.deepcopy(model.state_dict())
    root = np.random.SeedSequence(settings.seed)
    sampler = np.random.default_rng(root.spawn(1)[0])
    draws = [(float(np.exp(sampler.uniform(np.log(settings.lr_min), np.log(settings.lr_max)))),
              float(sampler.uniform(settings.wd_min, settings.wd_max)))
             for _ in range(settings.trials)]
    trial_seeds = sampler.integers(0, 2 ** 31 - 1, size=settings.trials + 1)

    trials: list[TuneTrial] = []
    for i, (lr, wd) in enumerate(draws):
        model.load_state_dict(base_state)
        try:
            epochs, val = _fit_lm(model, train_seqs, val_seqs, lr, wd, settings,
                                  int(trial_seeds[i]), pad_id)
        except FloatingPointError:
            trials.append(TuneTrial(i, lr, wd, 0, math.nan, "diverged"))
            continue
        trials.append(TuneTrial(i, lr, wd, epochs, val, "ok"))

    scored = [(t.best_val_loss, t.index) for t in trials if t.status == "ok"]
    if not scored:
        raise RuntimeError("all fine-tuning trials diverged")
    winner_idx = min(scored)[1]
    winner = trials[winner_idx]

    # final model: winner's hyperparameters on train + validation sequences
    model.load_state_dict(base_state)
    _fit_lm(model, sequences, [], winner.learning_rate, winner.weight_decay, settings,
            int(trial_seeds[-1]), pad_id, epochs_override=max(1, winner.epochs_trained))

    out_dir = str(out_dir)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    result = TuneResult(out_dir, trials, winner_idx)
    with open(f"{out_dir}/trials.json", "w", encoding="utf-8") as fh:
        json.dump({"winner_index": winner_idx, "trials": result.trial_log()}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return result
