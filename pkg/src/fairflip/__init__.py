"""Post-processing binary classifiers for group fairness with bias scores."""

__version__ = "0.1.0"
