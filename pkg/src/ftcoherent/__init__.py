"""Finite-time coherent sets from diffused Ulam transfer operators."""
from __future__ import annotations

__version__ = "0.1.0"
