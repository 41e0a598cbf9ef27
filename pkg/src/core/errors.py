"""
Exception hierarchy for the P6LoWPAN codec and simulator

Every error raised by the package derives from LowpanError so callers
(the CLI in particular) can map the whole family to one exit code.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from src.models.capability import Feature


class LowpanError(Exception):
    """Base class for all domain errors"""

    reason: str = "LowpanError"

    def __init__(self, message: str = "", *, reason: Optional[str] = None):
        super().__init__(message or self.__class__.__name__)
        if reason is not None:
            self.reason = reason


class InvariantViolation(LowpanError):
    """A value breaks one of its structural invariants"""

    reason = "InvariantViolation"


class TruncatedPacket(LowpanError):
    reason = "TruncatedPacket"


class BadVersion(LowpanError):
    reason = "BadVersion"


class TooLarge(LowpanError):
    """Datagram exceeds 1280 octets or the 11-bit datagram_size field"""

    reason = "TooLarge"


class UnknownDispatch(LowpanError):
    reason = "UnknownDispatch"


class MalformedIphc(LowpanError):
    reason = "MalformedIphc"


class MalformedHeader(LowpanError):
    reason = "MalformedHeader"


class ReservedBitsSet(LowpanError):
    reason = "ReservedBitsSet"


class BadLength(LowpanError):
    reason = "BadLength"


class CannotRepresent(LowpanError):
    """No encoding inside the allowed feature set can carry the packet"""

    reason = "CannotRepresent"


class UnsupportedFeatureError(LowpanError):
    """
    Frame uses a feature the receiver does not implement

    Carries the lowest-indexed missing feature; this drives the
    Class Unsupported ICMPv6 error.
    """

    def __init__(self, feature: "Feature", message: str = ""):
        self.feature = feature
        super().__init__(message or f"unsupported feature {feature.label}", reason=feature.label)


class ExpansionExceededError(LowpanError):
    """Header decompression would expand past the configured bound"""

    reason = "ExpansionExceeded"

    def __init__(self, expansion: int, limit: int):
        self.expansion = expansion
        self.limit = limit
        super().__init__(f"decompression expands {expansion} octets, limit {limit}")


class NoSourceAddress(LowpanError):
    reason = "NoSourceAddress"


class NoRoute(LowpanError):
    reason = "NoRoute"


class ConfigError(LowpanError):
    reason = "ConfigError"
