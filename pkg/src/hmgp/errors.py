"""Exception hierarchy shared by all modules."""


class HmgpError(Exception):
    """Base class for all errors raised by this package."""


class DataError(HmgpError):
    """Malformed input data: bad file format, dimension mismatch, non-finite entries."""


class ConfigError(HmgpError):
    """Invalid or incomplete experiment configuration."""


class NumericalError(HmgpError):
    """Numerical failure: singular kernels, non-finite objectives, failed factorizations."""
