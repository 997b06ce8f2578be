import numpy as np
import pytest

from encodekit.datamodel import EmbeddingTrack, StimulusTimeline, Word


def build_timeline(run_word_counts, tr=2.0, spacing=0.5, run_tr_counts=None,
                   texts=None) -> StimulusTimeline:
    """Timeline with evenly spaced words; TR counts default to the exact span."""
    words = []
    k = 0
    for run, n in enumerate(run_word_counts):
        for i in range(n):
            text = texts[k] if texts is not None else f"word{k}"
            words.append(Word(text, i * spacing, run))
            k += 1
    if run_tr_counts is None:
        run_tr_counts = [int(np.ceil(n * spacing / tr)) for n in run_word_counts]
    return StimulusTimeline(tuple(words), tr, tuple(run_tr_counts))


def build_track(timeline, embeddings=None, d=3, seed=0, **kwargs) -> EmbeddingTrack:
    n = timeline.n_words
    if embeddings is None:
        embeddings = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
    lp = -np.ones(n)
    defaults = dict(model_tag="baseline", scramble_tag="none", layer=0,
                    embeddings=embeddings, log_probs=lp,
                    log_prob_present=np.ones(n, dtype=bool), context_window=20)
    defaults.update(kwargs)
    return EmbeddingTrack(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
