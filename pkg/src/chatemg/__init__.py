"""Generative augmentation of small EMG support sets for intent inferral."""

__version__ = "0.1.0"
