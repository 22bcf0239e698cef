"""Shipped stimulation parameter presets (YAML, one per calibrated participant profile)."""
