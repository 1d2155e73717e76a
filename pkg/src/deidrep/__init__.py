"""Privacy-preserving representations for training de-identification taggers."""

__version__ = "0.1.0"
