"""Explainability and fairness audits for small skin-lesion image classifiers."""

__version__ = "0.1.0"
