class ChainScaleError(Exception):
    """Base class for all library errors."""


class UnboundLocationError(ChainScaleError):
    """A location key has no entry-datacenter binding."""


class InsufficientHistoryError(ChainScaleError):
    """A forecast was requested on an empty sample series."""


class DimensionMismatchError(ChainScaleError):
    """Matrix arguments do not share dimensions."""


class EncodingRangeError(ChainScaleError):
    """A value does not fit the header field it must be packed into."""


class SkewError(ChainScaleError):
    """A flow tag references an interval further than one step from the local one."""


class NoWorkingInstanceError(ChainScaleError):
    """Instance selection was attempted with no working instance available."""


class InstanceStateError(ChainScaleError):
    """An instance lifecycle operation was applied in the wrong state."""


class InfeasiblePlacementError(ChainScaleError):
    """The stage placement recurrence has no finite solution."""


class ConfigError(ChainScaleError):
    """Scenario configuration failed validation.

    Carries the full list of field-path-qualified problems.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
