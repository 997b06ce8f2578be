"""encodekit: lagged fMRI encoding models, alignment statistics, and
perturbation contrasts for language-model embedding tracks."""

from . import datamodel, encoder, featurize, lmtasks, stats, synth

__version__ = "0.1.0"

__all__ = ["datamodel", "encoder", "featurize", "lmtasks", "stats", "synth", "__version__"]
