"""Exception hierarchy shared across the toolkit.

Every category maps to a distinct CLI exit code (see cli.EXIT_CODES), so
callers can tell a malformed input from a bad configuration or a runtime
failure without parsing messages.
"""


class EcgadError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EcgadError):
    """Invalid configuration value or unknown configuration key."""


class ParseError(EcgadError):
    """Malformed cell/field while reading a record file."""


class StructureError(EcgadError):
    """File-level structural problem (ragged rows, truncated payload)."""


class SidecarError(EcgadError):
    """Inconsistent or invalid sidecar metadata (zero gain, bad lengths)."""


class SegmentationError(EcgadError):
    """R-peak detection could not find enough beats to segment."""


class DomainError(EcgadError):
    """Numeric input outside the mathematical domain of an operation."""


class ContaminationError(EcgadError):
    """Training set contains records not labeled normal."""


class ScoringError(EcgadError):
    """Scoring attempted with unusable (non-finite) parameters."""
