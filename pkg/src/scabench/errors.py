"""Shared exception types.

Everything user-facing raises one of these so the command line layer can map
failures onto stable exit codes (usage=1, bad data=2, numeric trouble=3).
"""


class DataFormatError(ValueError):
    """A file or in-memory structure does not match its documented format."""


class CapacityError(ValueError):
    """A trace does not fit the requested matrix shape.

    Carries ``required_channels``, the smallest channel count K that would
    make the same N work, so callers can report an actionable message.
    """

    def __init__(self, msg: str, required_channels: int | None = None):
        super().__init__(msg)
        self.required_channels = required_channels


class UnalignedTraceError(ValueError):
    """Raised when an operation needs per-record instruction alignment.

    Prime+Probe bit records observe cache sets, not single accesses, so they
    cannot be mapped back onto instruction addresses.
    """


class TrainingDiverged(FloatingPointError):
    """A loss or gradient became NaN during optimization."""
