"""Vallee-Poussin block criteria for the CLT in C(T), metric entropy and Monte-Carlo uniform bands."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
