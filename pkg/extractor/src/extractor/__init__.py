"""Embedding-track extraction and stimulus-tuning for causal language models."""

from .stimulus import Stimulus, apply_plan, load_plan, load_stimulus, stimulus_from_text
from .tracks import (AlignmentError, ExtractionConfig, FinetuneSettings, extract_arrays,
                     extract_track, load_model, save_track, word_perplexity)
from .tuning import TuneResult, TuneTrial, stimulus_tune

__version__ = "0.1.0"
