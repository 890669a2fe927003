"""Multi-source domain adaptation with a transformer feature generator for EEG emotion recognition."""

__version__ = "0.1.0"
