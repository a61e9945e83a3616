"""Exception hierarchy for the SD-USCB simulator.

Library code raises these; the simulator turns the recoverable ones into
trace flags and the CLI turns everything else into a one-line error and a
nonzero exit code.
"""


class SdUscbError(Exception):
    """Base class. ``code`` is the machine-readable token the CLI prints."""

    code = "sduscb"


class ChannelDomainError(SdUscbError, ValueError):
    code = "channel-domain"


class CoverageError(SdUscbError, LookupError):
    """Location outside the CKM extents or in an unpopulated cell."""

    code = "out-of-coverage"


class CkmFormatError(SdUscbError):
    code = "ckm-format"


class CkmVersionError(CkmFormatError):
    code = "ckm-version"


class RankDeficientError(SdUscbError, ArithmeticError):
    code = "rank-deficient"


class StarvationOverflowError(SdUscbError):
    code = "starvation-overflow"


class NotScheduledError(SdUscbError):
    code = "not-scheduled"


class ScenarioError(SdUscbError, ValueError):
    code = "invalid-scenario"


class TheoremInputError(SdUscbError, ValueError):
    code = "invalid-theorem-input"
