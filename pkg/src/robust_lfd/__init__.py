"""Robust learning from demonstration for grasping compliant objects."""
from ._accel import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
