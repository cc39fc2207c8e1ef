"""Exception types shared across the simulator.

Every error carries a protocol ``code`` so the session layer can turn it
into an ``error`` event without a lookup table.
"""

from __future__ import annotations


class FedsimError(Exception):
    code = "E_BAD_COMMAND"

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ConfigError(FedsimError, ValueError):
    """A configuration record failed validation."""

    code = "E_VALIDATION"


class ColdParamError(FedsimError, ValueError):
    code = "E_COLD_PARAM"


class ParamRangeError(FedsimError, ValueError):
    code = "E_RANGE"


class UnknownClientError(FedsimError, ValueError):
    code = "E_UNKNOWN_CLIENT"


class ProtocolError(FedsimError, ValueError):
    code = "E_BAD_COMMAND"


class ShapeError(ValueError):
    """Weight vector length does not match the network layout."""
