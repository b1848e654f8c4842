"""Spiking transformer with top-down feedback, plus analysis routines."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, DimensionError, DomainError, Model, NumericError  # noqa: F401

__version__ = "0.1.0"
