"""Exception types. CLI exit codes: 1 for validation/format, 2 for numerical failure."""


class GnfbcError(Exception):
    exit_code = 1


class DimensionError(GnfbcError, ValueError):
    """Shapes do not chain or do not match."""


class FormatError(GnfbcError):
    """A data or weights file is malformed."""


class NumericalError(GnfbcError):
    exit_code = 2
