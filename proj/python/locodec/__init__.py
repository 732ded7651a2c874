"""Continuous locomotion-speed decoding from EEG (Python bindings)."""

from ._locodec import *  # noqa: F401,F403
from ._locodec import Error, Session, EvalResult

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
