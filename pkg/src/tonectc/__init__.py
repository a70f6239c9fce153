"""Multi-tier CTC acoustic modeling of phones and tones."""

__version__ = "0.1.0"
