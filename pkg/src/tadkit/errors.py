"""Exception hierarchy shared by the loaders, operations and the CLI."""


class TadError(ValueError):
    """Base class for all input/validation errors raised by tadkit."""


class FormatError(TadError):
    """Malformed file: bad JSON, missing keys, bad magic, payload mismatch."""


class UnknownLabelError(TadError):
    def __init__(self, label):
        super().__init__(f"unknown label: {label!r}")
        self.label = label


class RangeError(TadError):
    """A numeric value lies outside its documented domain."""
