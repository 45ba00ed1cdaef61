"""Exception hierarchy. Each category maps to a distinct CLI exit status."""


class HCPError(Exception):
    exit_code = 1


class ShapeError(HCPError, ValueError):
    exit_code = 3


class DataError(HCPError, ValueError):
    """Malformed manifests, empty datasets, unusable annotations."""

    exit_code = 4


class StageMismatchError(HCPError):
    """A checkpoint from the wrong training stage was supplied."""

    exit_code = 5


class DegenerateInputError(HCPError, ValueError):
    exit_code = 6


class ConfigError(HCPError, ValueError):
    exit_code = 7


class CheckpointFormatError(HCPError):
    exit_code = 8
