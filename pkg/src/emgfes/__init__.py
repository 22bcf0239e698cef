"""Closed-loop EMG decoding and ankle stimulation engine."""

__version__ = "0.1.0"
