"""
Codec value types: compression contexts, decompression bounds, compressed
datagrams and the RFC 4944 fragment, mesh and broadcast headers
"""

from __future__ import annotations

import ipaddress
from enum import Enum
from typing import Dict, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.capability import EncodingDescriptor
from src.models.packet import LinkAddress


class ContextEntry(BaseModel):
    """One shared compression context: a prefix of up to 128 bits"""
    model_config = ConfigDict(frozen=True)

    prefix: bytes
    prefix_length: int = Field(ge=0, le=128)

    @field_validator("prefix")
    @classmethod
    def _pad_to_sixteen(cls, v: bytes) -> bytes:
        if len(v) > 16:
            raise ValueError("context prefix longer than 16 octets")
        return bytes(v) + bytes(16 - len(v))

    @classmethod
    def parse(cls, text: str) -> "ContextEntry":
        """Parse `2001:db8::/64`"""
        network = ipaddress.IPv6Network(text, strict=False)
        return cls(prefix=network.network_address.packed, prefix_length=network.prefixlen)

    def __str__(self) -> str:
        return f"{ipaddress.IPv6Address(self.prefix).compressed}/{self.prefix_length}"


class ContextTable(BaseModel):
    """Up to 16 contexts indexed by a 4-bit context ID; 0 is the default"""
    model_config = ConfigDict(frozen=True)

    entries: Dict[int, ContextEntry] = Field(default_factory=dict)

    @field_validator("entries")
    @classmethod
    def _four_bit_ids(cls, v: Dict[int, ContextEntry]) -> Dict[int, ContextEntry]:
        if len(v) > 16 or any(not 0 <= cid <= 15 for cid in v):
            raise ValueError("context IDs must be in 0..15")
        return v

    @classmethod
    def from_prefixes(cls, prefixes: Mapping[int, str]) -> "ContextTable":
        return cls(entries={cid: ContextEntry.parse(text) for cid, text in prefixes.items()})

    def get(self, cid: int) -> Optional[ContextEntry]:
        return self.entries.get(cid)

    def __len__(self) -> int:
        return len(self.entries)


EMPTY_CONTEXTS = ContextTable()


class DecompressionLimits(BaseModel):
    """Bounds a receiver enforces while decompressing headers"""
    model_config = ConfigDict(frozen=True)

    max_expansion: int = Field(default=50, ge=0)
    max_tunnel_depth: int = Field(default=1, ge=0)

    @classmethod
    def from_config(cls) -> "DecompressionLimits":
        from src.utils.config import get_config

        limits = get_config().lowpan.limits
        return cls(max_expansion=limits.max_expansion, max_tunnel_depth=limits.max_tunnel_depth)


class CompressedDatagram(BaseModel):
    """
    Output of compression

    `data` starts with the 0x41 or IPHC dispatch. The first
    `compressed_header_len` octets replace `uncompressed_header_len` octets of
    the original datagram; everything after them is carried verbatim.
    """
    model_config = ConfigDict(frozen=True)

    data: bytes
    descriptor: EncodingDescriptor
    compressed_header_len: int = Field(ge=1)
    uncompressed_header_len: int = Field(ge=0)

    @property
    def uncompressed_size(self) -> int:
        return len(self.data) - self.compressed_header_len + self.uncompressed_header_len


# ============================================================================
# RFC 4944 headers
# ============================================================================

class FragKind(str, Enum):
    FIRST = "first"
    SUBSEQUENT = "subsequent"


class FragHeader(BaseModel):
    """FRAG1 (4 octets) or FRAGN (5 octets)"""
    model_config = ConfigDict(frozen=True)

    kind: FragKind
    datagram_size: int = Field(ge=0, le=0x7FF)
    datagram_tag: int = Field(ge=0, le=0xFFFF)
    datagram_offset: int = Field(default=0, ge=0, le=0xFF)

    @model_validator(mode="after")
    def _offset_only_on_subsequent(self):
        if self.kind == FragKind.FIRST and self.datagram_offset:
            raise ValueError("FRAG1 carries no offset")
        return self

    @property
    def wire_length(self) -> int:
        return 4 if self.kind == FragKind.FIRST else 5


class MeshHeader(BaseModel):
    """Mesh-under addressing header"""
    model_config = ConfigDict(frozen=True)

    hops_left: int = Field(ge=0, le=14)
    originator: LinkAddress
    final: LinkAddress

    @property
    def wire_length(self) -> int:
        return 1 + len(self.originator.value) + len(self.final.value)


class BroadcastHeader(BaseModel):
    """LOWPAN_BC0 sequence header"""
    model_config = ConfigDict(frozen=True)

    sequence: int = Field(ge=0, le=0xFF)

    @property
    def wire_length(self) -> int:
        return 2
