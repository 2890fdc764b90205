"""Acoustic detection, localisation and classification of squash ball impacts."""

__version__ = "0.1.0"
