"""
Capability discovery models: the Class Unsupported ICMPv6 error, the ND
capability option, the RFC 6775 context option and neighbour entries
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.models.capability import CapabilityMode, CapabilitySet
from src.models.codec import ContextEntry
from src.models.packet import LinkAddress

ICMP_CLASS_UNSUPPORTED = 200
ICMP_ROUTER_SOLICITATION = 133
ICMP_ROUTER_ADVERTISEMENT = 134
ND_OPTION_CAPABILITY = 36
ND_OPTION_6LOWPAN_CONTEXT = 34


class ClassUnsupportedMsg(BaseModel):
    """Error a node sends when it cannot handle a frame's encoding"""
    model_config = ConfigDict(frozen=True)

    icmp_type: int = Field(default=ICMP_CLASS_UNSUPPORTED, ge=0, le=255)
    code: int = Field(default=0, ge=0, le=255)
    my_capability: CapabilitySet
    offending_prefix: bytes = Field(default=b"", max_length=1024)


class NdCapabilityOption(BaseModel):
    """Capability carried in RS/RA: 4 octets linear, 8 octets FLEX"""
    model_config = ConfigDict(frozen=True)

    capability: CapabilitySet

    @property
    def mode(self) -> CapabilityMode:
        return self.capability.mode

    @property
    def wire_length(self) -> int:
        return 4 if self.capability.is_linear else 8


class SixLowpanContextOption(BaseModel):
    """RFC 6775 6LoWPAN Context Option (6CO)"""
    model_config = ConfigDict(frozen=True)

    context_id: int = Field(ge=0, le=15)
    compression: bool = True
    valid_lifetime: int = Field(default=0xFFFF, ge=0, le=0xFFFF)
    prefix: bytes
    prefix_length: int = Field(ge=0, le=128)

    @field_validator("prefix")
    @classmethod
    def _pad(cls, v: bytes) -> bytes:
        if len(v) > 16:
            raise ValueError("context prefix longer than 16 octets")
        return bytes(v) + bytes(16 - len(v))

    @classmethod
    def from_entry(cls, context_id: int, entry: ContextEntry) -> "SixLowpanContextOption":
        return cls(context_id=context_id, prefix=entry.prefix, prefix_length=entry.prefix_length)

    @property
    def wire_length(self) -> int:
        return 16 if self.prefix_length <= 64 else 24


class NeighborSource(str, Enum):
    """Where a neighbour's capability was learned"""
    ND = "Nd"
    ICMP = "Icmp"
    UNKNOWN = "Unknown"


class NeighborEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    link_addr: LinkAddress
    capability: Optional[CapabilitySet] = None
    source: NeighborSource = NeighborSource.UNKNOWN
    last_updated: int = 0

    @classmethod
    def unknown(cls, link_addr: LinkAddress) -> "NeighborEntry":
        return cls(link_addr=link_addr)

    @property
    def known(self) -> bool:
        return self.capability is not None
