"""Interlaced characterization and calibration of a Hosford-Voce plasticity model."""
from __future__ import annotations

__version__ = "0.1.0"
