"""Embedding-track extraction from a causal language model.

For every word position the model runs on that word plus its preceding
context of up to ``context_window - 1`` words (contexts never cross run
boundaries); the chosen layer's hidden states over the word's tokens are
averaged into one embedding vector, and the word's log-probability is the
sum of its tokens' log-probabilities under the previous step's prediction
head (weights tied to the input embeddings).  The first word of each run
has no prediction context and carries no log-probability.

Scrambling, when requested, is applied to the word sequence before
tokenization; extraction then reads the scrambled text exactly as the
unscrambled path would.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import ekc
from .stimulus import Stimulus


class AlignmentError(RuntimeError):
    """A word could not be mapped to tokens; carries the word position."""

    def __init__(self, position: int, word: str, reason: str):
        super().__init__(f"word {position} ({word!r}): {reason}")
        self.position = position


@dataclass
class ExtractionConfig:
    model_path: str
    layer: int | None = None          # None -> middle layer
    context_window: int = 20          # words, including the word itself
    batch_size: int = 16
    eval_word_range: tuple[int, int] | None = None
    fine_tune: "FinetuneSettings | None" = None

    def __post_init__(self):
        if self.context_window < 1:
            raise ValueError(f"context_window must be >= 1, got {self.context_window}")


@dataclass
class FinetuneSettings:
    sequence_length: int = 80         # words per non-overlapping training sample
    trials: int = 100
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    wd_min: float = 0.0
    wd_max: float = 1e-5
    max_epochs: int = 40
    batch_size: int = 16
    patience: int = 3
    validation_fraction: float = 0.1
    seed: int = 0


def load_model(model_path: str):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_path)
    model = AutoModelForCausalLM.from_pretrained(model_path)
    model.eval()
    return model, tokenizer


def tokenize_words(tokenizer, words, offset: int = 0) -> list[list[int]]:
    """Per-word token ids; words after the first get a leading space so BPE
    merges match running text."""
    spans = []
    for k, word in enumerate(words):
        text = word if k == 0 else " " + word
        ids = tokenizer.encode(text, add_special_tokens=False)
        if not ids:
            raise AlignmentError(offset + k, word, "tokenizes to zero tokens")
        spans.append(ids)
    return spans


def _context_bounds(stimulus: Stimulus, i: int, window: int) -> int:
    return max(stimulus.run_start(i), i - (window - 1))


@torch.no_grad()
def extract_arrays(model, tokenizer, stimulus: Stimulus, config: ExtractionConfig,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Embeddings (n_words, d) f32, log-probs (n_words,) f64, presence mask, layer."""
    n_layers = model.config.num_hidden_layers
    layer = config.layer if config.layer is not None else n_layers // 2
    if not (0 <= layer <= n_layers):
        raise ValueError(f"layer {layer} outside 0..{n_layers} (0 is the embedding layer)")

    n = stimulus.n_words
    d = model.config.hidden_size
    embeddings = np.zeros((n, d), dtype=np.float32)
    log_probs = np.zeros(n, dtype=np.float64)
    present = np.zeros(n, dtype=bool)

    # token spans for each position's context are re-derived per window so a
    # word's leading-space tokenization matches its place in running text
    jobs = []
    for i in range(n):
        start = _context_bounds(stimulus, i, config.context_window)
        spans = tokenize_words(tokenizer, stimulus.words[start:i + 1], offset=start)
        ids = [t for span in spans for t in span]
        target_len = len(spans[-1])
        jobs.append((i, ids, target_len))

    pad_id = tokenizer.pad_token_id
    if pad_id is None:
        pad_id = tokenizer.eos_token_id or 0

    for batch_start in range(0, n, config.batch_size):
        batch = jobs[batch_start:batch_start + config.batch_size]
        width = max(len(ids) for _, ids, _ in batch)
        input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
        mask = torch.zeros((len(batch), width), dtype=torch.long)
        for row, (_, ids, _) in enumerate(batch):
            input_ids[row, :len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[row, :len(ids)] = 1
        out = model(input_ids=input_ids, attention_mask=mask, output_hidden_states=True)
        hidden = out.hidden_states[layer]
        logp = torch.log_softmax(out.logits.double(), dim=-1)
        for row, (i, ids, target_len) in enumerate(batch):
            lo, hi = len(ids) - target_len, len(ids)
            embeddings[i] = hidden[row, lo:hi].mean(dim=0).float().numpy()
            if lo > 0:
                # previous step's head scores each of the word's tokens
                total = 0.0
                for k in range(lo, hi):
                    total += float(logp[row, k - 1, ids[k]])
                log_probs[i] = min(total, 0.0)
                present[i] = True
    return embeddings, log_probs, present, layer


def extract_track(config: ExtractionConfig, stimulus: Stimulus, plan: dict | None = None,
                  model_tag: str = "baseline", scramble_tag: str | None = None,
                  model=None, tokenizer=None) -> dict:
    """Run extraction and return the track tensors plus metadata."""
    from .stimulus import apply_plan

    if model is None or tokenizer is None:
        model, tokenizer = load_model(config.model_path)
    if plan is not None:
        stimulus = apply_plan(stimulus, plan)
        if scramble_tag is None:
            scramble_tag = f"plan-seed{plan.get('seed', '?')}"
    embeddings, log_probs, present, layer = extract_arrays(model, tokenizer, stimulus, config)
    return {
        "embeddings": embeddings,
        "log_probs": log_probs,
        "log_prob_present": present,
        "meta": {
            "kind": "track",
            "model_tag": model_tag,
            "scramble_tag": scramble_tag or "none",
            "layer": layer,
            "context_window": config.context_window,
            "eval_word_range": list(config.eval_word_range) if config.eval_word_range else None,
        },
    }


def save_track(track: dict, path) -> None:
    ekc.write({
        "embeddings": track["embeddings"].astype(np.float32),
        "log_probs": track["log_probs"].astype(np.float64),
        "log_prob_present": track["log_prob_present"].astype(np.uint8),
        "meta": ekc.pack_meta(track["meta"]),
    }, path)


def word_perplexity(track: dict, word_range: tuple[int, int] | None = None) -> float:
    """exp(-mean word log-prob) over present positions, optionally range-restricted."""
    lp = track["log_probs"]
    present = track["log_prob_present"]
    if word_range is not None:
        lp = lp[word_range[0]:word_range[1]]
        present = present[word_range[0]:word_range[1]]
    vals = lp[present]
    if vals.size == 0:
        raise ValueError("no present log-probabilities in range")
    return float(np.exp(-vals.mean()))
