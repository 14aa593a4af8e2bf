"""Neural point-process model built on a monotone cumulative hazard network."""
from __future__ import annotations

__version__ = "0.1.0"
