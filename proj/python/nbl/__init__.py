"""Attention-layer linearization toolkit."""

from ._nbl import *  # noqa: F401,F403
from ._nbl import (
    FormatError,
    NumericError,
    ValidationError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
