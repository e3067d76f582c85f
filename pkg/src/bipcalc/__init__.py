"""Desk-scale numerics for sectorial operators, bounded imaginary powers and
a fourth-order diffusion model with four boundary-condition sets."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .operators import ModelParams  # noqa: F401
