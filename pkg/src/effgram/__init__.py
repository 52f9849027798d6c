"""Effective Gram matrix analysis of generalization in gradient-trained networks."""
from .errors import (DivergenceError, EffgramError, FormatError, InputError, IntegrityError,
                     ShapeError)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "EffgramError", "FormatError", "InputError", "IntegrityError",
    "ShapeError", "__version__",
]
