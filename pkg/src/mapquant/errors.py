"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DataError(ValueError):
    """Invalid input data (malformed documents, shape mismatches, bad parameters)."""


class MapFormatError(DataError):
    """A map document failed to parse or violates a SceneMap invariant."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CompressedFormatError(DataError):
    """A compressed container is corrupt, truncated or inconsistent."""


class NumericalError(ArithmeticError):
    """An iterative routine produced a non-finite value."""
