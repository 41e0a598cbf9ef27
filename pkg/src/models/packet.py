"""
IPv6 datagram and 802.15.4 link frame models

Immutable pydantic values; wire encoding lives in src.core.wire.
"""

from __future__ import annotations

import ipaddress
from enum import Enum
from typing import Annotated, Dict, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.errors import InvariantViolation, TooLarge

IPV6_HEADER_LEN = 40
IPV6_MIN_MTU = 1280
MAX_FRAME_SIZE = 127
DEFAULT_MAC_OVERHEAD = 21

PROTO_HOP_BY_HOP = 0
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_IPV6 = 41
PROTO_ROUTING = 43
PROTO_FRAGMENT = 44
PROTO_ICMPV6 = 58
PROTO_NO_NEXT_HEADER = 59
PROTO_DESTINATION_OPTIONS = 60
PROTO_MOBILITY = 135

LINK_LOCAL_PREFIX = bytes.fromhex("fe80000000000000")


# ============================================================================
# Addresses
# ============================================================================

class Ipv6Address(BaseModel):
    """16-octet IPv6 address"""
    model_config = ConfigDict(frozen=True)

    value: bytes

    @field_validator("value")
    @classmethod
    def _sixteen_octets(cls, v: bytes) -> bytes:
        if len(v) != 16:
            raise ValueError(f"IPv6 address must be 16 octets, got {len(v)}")
        return bytes(v)

    @classmethod
    def from_bytes(cls, value: bytes) -> "Ipv6Address":
        return cls(value=value)

    @classmethod
    def parse(cls, text: str) -> "Ipv6Address":
        return cls(value=ipaddress.IPv6Address(text).packed)

    @classmethod
    def link_local(cls, iid: bytes) -> "Ipv6Address":
        return cls(value=LINK_LOCAL_PREFIX + iid)

    @property
    def is_multicast(self) -> bool:
        return self.value[0] == 0xFF

    @property
    def is_link_local(self) -> bool:
        return self.value[:8] == LINK_LOCAL_PREFIX

    @property
    def is_unspecified(self) -> bool:
        return self.value == bytes(16)

    @property
    def iid(self) -> bytes:
        return self.value[8:]

    def __str__(self) -> str:
        return ipaddress.IPv6Address(self.value).compressed

    def __repr__(self) -> str:
        return f"Ipv6Address({self})"


UNSPECIFIED = Ipv6Address(value=bytes(16))


class LinkAddressMode(str, Enum):
    """802.15.4 addressing mode"""
    EXTENDED = "extended"
    SHORT = "short"


class LinkAddress(BaseModel):
    """Extended (EUI-64) or 16-bit short 802.15.4 address"""
    model_config = ConfigDict(frozen=True)

    mode: LinkAddressMode
    value: bytes

    @model_validator(mode="after")
    def _width_matches_mode(self):
        expected = 8 if self.mode == LinkAddressMode.EXTENDED else 2
        if len(self.value) != expected:
            raise ValueError(f"{self.mode.value} link address must be {expected} octets")
        return self

    @classmethod
    def extended(cls, value: bytes) -> "LinkAddress":
        return cls(mode=LinkAddressMode.EXTENDED, value=value)

    @classmethod
    def short(cls, value: int) -> "LinkAddress":
        return cls(mode=LinkAddressMode.SHORT, value=value.to_bytes(2, "big"))

    @classmethod
    def parse(cls, text: str) -> "LinkAddress":
        """
        Parse `0x1234` (short) or `02:00:00:00:00:00:00:01` (extended)

        A bare hex string selects the mode by its width.
        """
        text = text.strip().lower()
        if text.startswith("0x"):
            return cls.short(int(text, 16))
        raw = bytes.fromhex(text.replace(":", "").replace("-", ""))
        if len(raw) == 2:
            return cls(mode=LinkAddressMode.SHORT, value=raw)
        return cls.extended(raw)

    @property
    def is_short(self) -> bool:
        return self.mode == LinkAddressMode.SHORT

    @property
    def is_broadcast(self) -> bool:
        return self.is_short and self.value == b"\xff\xff"

    def iid(self) -> bytes:
        """Interface identifier derived from this link address"""
        if self.is_short:
            return b"\x00\x00\x00\xff\xfe\x00" + self.value
        return bytes([self.value[0] ^ 0x02]) + self.value[1:]

    def link_local_address(self) -> Ipv6Address:
        return Ipv6Address.link_local(self.iid())

    def __str__(self) -> str:
        if self.is_short:
            return f"0x{self.value.hex()}"
        return ":".join(f"{b:02x}" for b in self.value)

    def __repr__(self) -> str:
        return f"LinkAddress({self})"


BROADCAST_LINK = LinkAddress(mode=LinkAddressMode.SHORT, value=b"\xff\xff")


# ============================================================================
# Headers
# ============================================================================

class Ipv6Header(BaseModel):
    """Fixed 40-octet IPv6 header"""
    model_config = ConfigDict(frozen=True)

    version: Literal[6] = 6
    traffic_class: int = Field(default=0, ge=0, le=0xFF)
    flow_label: int = Field(default=0, ge=0, le=0xFFFFF)
    payload_length: int = Field(default=0, ge=0, le=0xFFFF)
    next_header: int = Field(ge=0, le=0xFF)
    hop_limit: int = Field(default=64, ge=0, le=0xFF)
    src: Ipv6Address
    dst: Ipv6Address


class ExtensionKind(str, Enum):
    """IPv6 extension headers the codec understands"""
    HOP_BY_HOP = "hop_by_hop"
    ROUTING = "routing"
    FRAGMENT = "fragment"
    DESTINATION_OPTIONS = "destination_options"
    MOBILITY = "mobility"
    TUNNELED_IPV6 = "tunneled_ipv6"

    @property
    def protocol(self) -> int:
        return _KIND_PROTOCOL[self]

    @classmethod
    def for_protocol(cls, protocol: int) -> Optional["ExtensionKind"]:
        return _PROTOCOL_KIND.get(protocol)

    @property
    def has_options(self) -> bool:
        """Hop-by-hop and destination options carry TLV options with padding"""
        return self in (ExtensionKind.HOP_BY_HOP, ExtensionKind.DESTINATION_OPTIONS)


_KIND_PROTOCOL: Dict[ExtensionKind, int] = {
    ExtensionKind.HOP_BY_HOP: PROTO_HOP_BY_HOP,
    ExtensionKind.ROUTING: PROTO_ROUTING,
    ExtensionKind.FRAGMENT: PROTO_FRAGMENT,
    ExtensionKind.DESTINATION_OPTIONS: PROTO_DESTINATION_OPTIONS,
    ExtensionKind.MOBILITY: PROTO_MOBILITY,
    ExtensionKind.TUNNELED_IPV6: PROTO_IPV6,
}
_PROTOCOL_KIND: Dict[int, ExtensionKind] = {p: k for k, p in _KIND_PROTOCOL.items()}


class ExtensionHeader(BaseModel):
    """
    One IPv6 extension header

    `body` holds the octets after the next-header and length octets. The
    fragment header's second octet is reserved (zero), so its body is 6
    octets. A tunneled IPv6 "extension" has no such prefix: the body is the
    complete inner datagram and it must be the last entry of the chain.
    """
    model_config = ConfigDict(frozen=True)

    kind: ExtensionKind
    next_header: int = Field(default=PROTO_NO_NEXT_HEADER, ge=0, le=0xFF)
    body: bytes = b""

    @model_validator(mode="after")
    def _length_rules(self):
        size = len(self.body)
        if self.kind == ExtensionKind.FRAGMENT:
            if size != 6:
                raise ValueError("fragment header body must be 6 octets")
        elif self.kind == ExtensionKind.TUNNELED_IPV6:
            if size < IPV6_HEADER_LEN:
                raise ValueError("tunneled IPv6 body must hold a complete datagram")
        elif (2 + size) % 8 != 0 or size > 2046:
            raise ValueError(f"{self.kind.value} header length {2 + size} is not a multiple of 8")
        return self

    @property
    def protocol(self) -> int:
        return self.kind.protocol

    @property
    def wire_length(self) -> int:
        if self.kind == ExtensionKind.TUNNELED_IPV6:
            return len(self.body)
        return 2 + len(self.body)


# ============================================================================
# Transports
# ============================================================================

class UdpHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    src_port: int = Field(ge=0, le=0xFFFF)
    dst_port: int = Field(ge=0, le=0xFFFF)
    length: int = Field(ge=8, le=0xFFFF)
    checksum: int = Field(default=0, ge=0, le=0xFFFF)


class Udp(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["udp"] = "udp"
    header: UdpHeader
    payload: bytes = b""

    @property
    def protocol(self) -> int:
        return PROTO_UDP

    @property
    def wire_length(self) -> int:
        return 8 + len(self.payload)


class Icmpv6(BaseModel):
    """ICMPv6 message, type/code/checksum included in `data`"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["icmpv6"] = "icmpv6"
    data: bytes

    @property
    def protocol(self) -> int:
        return PROTO_ICMPV6

    @property
    def wire_length(self) -> int:
        return len(self.data)

    @property
    def icmp_type(self) -> Optional[int]:
        return self.data[0] if self.data else None


class Raw(BaseModel):
    """Upper layer the codec passes through without interpreting"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["raw"] = "raw"
    protocol: int = Field(ge=0, le=0xFF)
    data: bytes = b""

    @property
    def wire_length(self) -> int:
        return len(self.data)


Transport = Annotated[Union[Udp, Icmpv6, Raw], Field(discriminator="kind")]

NO_TRANSPORT = Raw(protocol=PROTO_NO_NEXT_HEADER, data=b"")


# ============================================================================
# Datagram
# ============================================================================

class Ipv6Packet(BaseModel):
    """
    Parsed IPv6 datagram: header, extension chain, transport

    Construction rejects datagrams over 1280 octets. Chain consistency is
    checked when serializing so malformed packets can still be modelled.
    """
    model_config = ConfigDict(frozen=True)

    header: Ipv6Header
    extensions: Tuple[ExtensionHeader, ...] = ()
    transport: Transport

    @model_validator(mode="after")
    def _size_cap(self):
        if self.wire_length > IPV6_MIN_MTU:
            raise TooLarge(f"datagram of {self.wire_length} octets exceeds {IPV6_MIN_MTU}")
        return self

    @property
    def payload_wire_length(self) -> int:
        return sum(e.wire_length for e in self.extensions) + self.transport.wire_length

    @property
    def wire_length(self) -> int:
        return IPV6_HEADER_LEN + self.payload_wire_length

    @property
    def src(self) -> Ipv6Address:
        return self.header.src

    @property
    def dst(self) -> Ipv6Address:
        return self.header.dst

    @property
    def tunneled(self) -> Optional[ExtensionHeader]:
        for ext in self.extensions:
            if ext.kind == ExtensionKind.TUNNELED_IPV6:
                return ext
        return None

    @classmethod
    def build(
        cls,
        src: Ipv6Address,
        dst: Ipv6Address,
        transport: Union[Udp, Icmpv6, Raw],
        extensions: Sequence[ExtensionHeader] = (),
        *,
        hop_limit: int = 64,
        traffic_class: int = 0,
        flow_label: int = 0,
    ) -> "Ipv6Packet":
        """
        Assemble a packet with a consistent next-header chain and lengths

        Each extension's next_header is rewritten to the protocol that
        follows it; UDP length is set from the payload when it is zero.
        """
        if isinstance(transport, Udp) and transport.header.length != 8 + len(transport.payload):
            transport = transport.model_copy(
                update={"header": transport.header.model_copy(update={"length": 8 + len(transport.payload)})}
            )
        exts = list(extensions)
        if exts and exts[-1].kind == ExtensionKind.TUNNELED_IPV6:
            transport = NO_TRANSPORT
        for i, ext in enumerate(exts):
            if ext.kind == ExtensionKind.TUNNELED_IPV6 and i != len(exts) - 1:
                raise InvariantViolation("tunneled IPv6 must be the last extension")
            following = exts[i + 1].protocol if i + 1 < len(exts) else transport.protocol
            if ext.kind == ExtensionKind.TUNNELED_IPV6:
                following = PROTO_NO_NEXT_HEADER
            if ext.next_header != following:
                exts[i] = ext.model_copy(update={"next_header": following})
        first = exts[0].protocol if exts else transport.protocol
        payload_length = sum(e.wire_length for e in exts) + transport.wire_length
        header = Ipv6Header(
            traffic_class=traffic_class,
            flow_label=flow_label,
            payload_length=payload_length,
            next_header=first,
            hop_limit=hop_limit,
            src=src,
            dst=dst,
        )
        return cls(header=header, extensions=tuple(exts), transport=transport)

    def __str__(self) -> str:
        chain = "/".join(e.kind.value for e in self.extensions)
        return f"Ipv6Packet({self.src} -> {self.dst}, {chain or '-'}, {self.transport.kind}, {self.wire_length} octets)"


# ============================================================================
# Link frames
# ============================================================================

class LinkFrame(BaseModel):
    """802.15.4 frame with an abstract fixed MAC overhead"""
    model_config = ConfigDict(frozen=True)

    src_link: LinkAddress
    dst_link: LinkAddress
    payload: bytes
    mac_overhead: int = Field(default=DEFAULT_MAC_OVERHEAD, ge=0, le=MAX_FRAME_SIZE)

    @model_validator(mode="after")
    def _fits_frame(self):
        if len(self.payload) > MAX_FRAME_SIZE - self.mac_overhead:
            raise InvariantViolation(
                f"frame payload {len(self.payload)} exceeds {MAX_FRAME_SIZE - self.mac_overhead} octets"
            )
        return self

    @property
    def on_air_length(self) -> int:
        return self.mac_overhead + len(self.payload)
