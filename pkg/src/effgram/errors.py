"""Exception types shared across the package.

Each maps to a CLI exit status (see :mod:`effgram.cli`).
"""


class EffgramError(Exception):
    exit_code = 1


class ShapeError(EffgramError, ValueError):
    exit_code = 2


class InputError(EffgramError, ValueError):
    exit_code = 2


class FormatError(EffgramError, ValueError):
    exit_code = 2


class DivergenceError(EffgramError, RuntimeError):
    exit_code = 3

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IntegrityError(EffgramError, RuntimeError):
    exit_code = 4
