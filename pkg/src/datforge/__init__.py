"""datforge: desk-scale domain adversarial training for distortion-robust classifiers."""

__version__ = "0.1.0"
