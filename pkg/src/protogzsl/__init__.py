"""Prototype-based generalized zero-shot learner trained with
information-theoretic losses."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: F401
