"""Quantum state transfer through non-Hermitian spin chains."""

from __future__ import annotations

__version__ = "0.1.0"

from .dynamics import TimeGrid
from .models import ModelSpec

__all__ = ["ModelSpec", "TimeGrid", "__version__"]
