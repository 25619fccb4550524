"""hydra_ct: measurement-only deep-equilibrium reconstruction for sparse-view CT."""

from .backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
