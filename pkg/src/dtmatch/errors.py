"""Exception types shared across the package."""


class DtmError(Exception):
    """Base class for all dtmatch errors."""


class InvalidInputError(DtmError, ValueError):
    """A value violates a documented precondition (non-finite data, bad ROI, ...)."""


class ShapeError(DtmError, ValueError):
    """Dimensions of two objects that must agree do not."""


class ContractError(DtmError, ValueError):
    """An object does not satisfy a required flag or convention (e.g. not normalized)."""


class StoreFormatError(DtmError, ValueError):
    """A store or manifest file is structurally invalid; the message names the field."""


class StoreCorruptionError(DtmError, ValueError):
    """A store file is recognized but its payload is inconsistent with the header."""


class ConfigError(DtmError, ValueError):
    """A configuration value or method name is not usable."""


class DataError(DtmError, ValueError):
    """Evaluation data is inconsistent (unknown image id, duplicate index, ...)."""
