import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

DATA = Path(__file__).parent / "data"

warnings.filterwarnings("ignore", message=".*loss_type.*")


def train_tokenizer(out_dir: Path, vocab_size: int = 700):
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers

    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(vocab_size=vocab_size, special_tokens=["<|pad|>"],
                                  initial_alphabet=pre_tokenizers.ByteLevel.alphabet())
    texts = [(DATA / "pretrain.txt").read_text(), (DATA / "chapter.txt").read_text()]
    tok.train_from_iterator(texts, trainer)
    tok.save(str(out_dir / "tokenizer.json"))


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory) -> Path:
    """A small word-ish-level causal LM pretrained on the fable corpus.

    Stands in for "a small pretrained causal LM": built and trained once
    per session, entirely offline, then loaded through the normal
    from_pretrained path everywhere else.
    """
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    from extractor.tuning import _batches, _sequences

    out = tmp_path_factory.mktemp("tiny_lm")
    train_tokenizer(out)
    tokenizer = PreTrainedTokenizerFast(tokenizer_file=str(out / "tokenizer.json"),
                                        pad_token="<|pad|>")
    config = GPT2Config(vocab_size=tokenizer.vocab_size, n_embd=64, n_layer=2, n_head=2,
                        n_positions=256, bos_token_id=0, eos_token_id=0)
    torch.manual_seed(0)
    model = GPT2LMHeadModel(config)
    sequences = _sequences(tokenizer, (DATA / "pretrain.txt").read_text(), 80)
    optimizer = torch.optim.AdamW(model.parameters(), lr=5e-3)
    rng = np.random.default_rng(0)
    pad = tokenizer.pad_token_id
    for _ in range(30):
        model.train()
        for ids, mask, labels in _batches(sequences, rng.permutation(len(sequences)), 8, pad):
            optimizer.zero_grad()
            loss = model(input_ids=ids, attention_mask=mask, labels=labels).loss
            loss.backward()
            optimizer.step()
    model.eval()
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return out


@pytest.fixture(scope="session")
def baseline(model_dir):
    from extractor.tracks import load_model

    return load_model(str(model_dir))


@pytest.fixture(scope="session")
def chapter_words() -> list[str]:
    return (DATA / "chapter.txt").read_text().split()


@pytest.fixture(scope="session")
def chapter_stimulus(chapter_words):
    """The chapter split into 4 runs of roughly equal length."""
    from extractor.stimulus import Stimulus

    n = len(chapter_words)
    bounds = np.linspace(0, n, 5).astype(int)
    run_ids = np.zeros(n, dtype=int)
    for r in range(4):
        run_ids[bounds[r]:bounds[r + 1]] = r
    return Stimulus(tuple(chapter_words), tuple(int(r) for r in run_ids))


def make_plan(stimulus, window_size=20, seed=5) -> dict:
    """Window permutations tiling each run, identity windows re-drawn."""
    rng = np.random.default_rng(seed)
    windows = []
    n = stimulus.n_words
    run_starts = [i for i in range(n) if i == 0 or stimulus.run_ids[i] != stimulus.run_ids[i - 1]]
    run_starts.append(n)
    for r, (lo, hi) in enumerate(zip(run_starts, run_starts[1:])):
        for s in range(lo, hi, window_size):
            e = min(s + window_size, hi)
            perm = rng.permutation(e - s)
            while e - s >= 2 and np.array_equal(perm, np.arange(e - s)):
                perm = rng.permutation(e - s)
            windows.append({"run_id": stimulus.run_ids[s], "start": s, "stop": e,
                            "permutation": perm.tolist()})
    return {"window_size": window_size, "seed": seed, "windows": windows}
