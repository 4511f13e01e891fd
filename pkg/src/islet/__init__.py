"""Island-model simulation with statistical model checking of QuaTEx queries."""

from __future__ import annotations

from .model import ModelParams, reset, step
from .quatex import parse
from .simapi import IslandSimulator, derive_seed
from .smc import SmcSettings, estimate

__all__ = ["ModelParams", "reset", "step", "parse", "IslandSimulator", "derive_seed", "SmcSettings", "estimate"]
__version__ = "0.1.0"
