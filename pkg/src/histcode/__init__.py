"""Contrastive tile encoders, attention MIL and differential-expression
prediction for whole-slide pathology images."""

__version__ = "0.1.0"
