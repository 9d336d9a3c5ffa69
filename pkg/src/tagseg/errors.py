"""Exception hierarchy shared by all tagseg modules.

Exit codes are part of the CLI contract: 0 success, 2 input error,
3 format error, 4 parameter error.
"""


class TagError(Exception):
    """Base class for all tagseg errors."""

    exit_code = 1


class InputError(TagError):
    """Missing, mismatched, or non-finite input data."""

    exit_code = 2


class AlignmentError(InputError):
    """Record count and embedding row count disagree."""


class FormatError(TagError):
    """A file does not conform to its documented byte layout."""

    exit_code = 3


class ParameterError(TagError):
    """A configuration value is out of its legal range."""

    exit_code = 4


class DegenerateVectorWarning(UserWarning):
    """An all-zero vector was encountered where a direction was expected."""
