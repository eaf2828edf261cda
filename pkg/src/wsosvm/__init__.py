"""Weakly-supervised ordinal SVM toolkit."""

__version__ = "0.1.0"
