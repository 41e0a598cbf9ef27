"""
Capability discovery

Two ways a node learns what its neighbours can decode: reactively, from
the Class Unsupported ICMPv6 error a neighbour returns when it cannot
handle a frame, and proactively, from a capability option carried in
Router Solicitations and Advertisements. Learned capabilities live in a
bounded neighbour table.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import bitstruct
import numpy as np

from src.core.capability import FLEX_WIRE_LEN, flex_decode, flex_encode
from src.core.errors import BadLength, InvariantViolation, MalformedHeader, ReservedBitsSet
from src.core.wire import icmpv6_checksum
from src.models.capability import (
    FLEX_STATE_BITS,
    LINEAR_STATE_BITS,
    CapabilityLevel,
    CapabilityMode,
    CapabilitySet,
)
from src.models.discovery import (
    ICMP_ROUTER_ADVERTISEMENT,
    ICMP_ROUTER_SOLICITATION,
    ND_OPTION_6LOWPAN_CONTEXT,
    ND_OPTION_CAPABILITY,
    ClassUnsupportedMsg,
    NdCapabilityOption,
    NeighborEntry,
    NeighborSource,
    SixLowpanContextOption,
)
from src.models.packet import Icmpv6, Ipv6Address, Ipv6Packet, LinkAddress
from src.utils.config import get_config
from src.utils.logger import get_logger

logger = get_logger(__name__)

MODE_LINEAR = 0
MODE_FLEX = 1

ALL_NODES = Ipv6Address.parse("ff02::1")
ALL_ROUTERS = Ipv6Address.parse("ff02::2")
ND_HOP_LIMIT = 255

# type | code | checksum | mode
_ERROR_HEAD = struct.Struct("!BBHB")
# reserved(5) | level(3)
_LINEAR_LEVEL = bitstruct.compile("u5u3")
_CONTEXT_FLAGS = bitstruct.compile("u3u1u4")


# ============================================================================
# Class Unsupported error
# ============================================================================

def encode_class_unsupported(msg: ClassUnsupportedMsg) -> bytes:
    """
    ICMPv6 message bytes with a zero checksum

    Layout after type, code and checksum: a mode octet (0 linear, 1 FLEX),
    then either the level octet plus two reserved octets, or the 32-bit FLEX
    bitfield plus two reserved octets, then the offending frame prefix.
    """
    cap = msg.my_capability
    if cap.is_linear:
        body = _ERROR_HEAD.pack(msg.icmp_type, msg.code, 0, MODE_LINEAR)
        body += _LINEAR_LEVEL.pack(0, int(cap.level)) + bytes(2)
    else:
        body = _ERROR_HEAD.pack(msg.icmp_type, msg.code, 0, MODE_FLEX)
        body += flex_encode(cap.features) + bytes(2)
    return body + msg.offending_prefix


def parse_class_unsupported(data: bytes) -> ClassUnsupportedMsg:
    """
    Raises:
        BadLength: message shorter than its fixed part
        ReservedBitsSet: reserved octets or an undefined level in use
        MalformedHeader: unknown capability mode
    """
    if len(data) < _ERROR_HEAD.size:
        raise BadLength(f"Class Unsupported message of {len(data)} octets")
    icmp_type, code, _, mode = _ERROR_HEAD.unpack(data[:_ERROR_HEAD.size])
    rest = data[_ERROR_HEAD.size:]
    if mode == MODE_LINEAR:
        if len(rest) < 3:
            raise BadLength("linear capability truncated")
        reserved, level = _LINEAR_LEVEL.unpack(rest[:1])
        if reserved or rest[1:3] != b"\x00\x00":
            raise ReservedBitsSet("reserved bits in linear capability")
        if level > max(CapabilityLevel):
            raise ReservedBitsSet(f"undefined capability level {level}")
        capability = CapabilitySet.linear(level)
        prefix = rest[3:]
    elif mode == MODE_FLEX:
        if len(rest) < FLEX_WIRE_LEN + 2:
            raise BadLength("FLEX capability truncated")
        if rest[FLEX_WIRE_LEN:FLEX_WIRE_LEN + 2] != b"\x00\x00":
            raise ReservedBitsSet("reserved octets after FLEX bitfield")
        capability = CapabilitySet.flex(flex_decode(rest[:FLEX_WIRE_LEN]))
        prefix = rest[FLEX_WIRE_LEN + 2:]
    else:
        raise MalformedHeader(f"unknown capability mode {mode}")
    return ClassUnsupportedMsg(icmp_type=icmp_type, code=code, my_capability=capability, offending_prefix=prefix)


def build_class_unsupported(
    my: CapabilitySet,
    offending: bytes,
    *,
    src: Ipv6Address,
    dst: Ipv6Address,
    icmp_type: Optional[int] = None,
    prefix_len: Optional[int] = None,
) -> Ipv6Packet:
    """
    ICMPv6 Class Unsupported error about an offending frame payload

    Args:
        my: capability of the node reporting the error
        offending: frame payload that could not be handled
        src: reporting node's address
        dst: offending frame's IPv6 source
        icmp_type: ICMPv6 type (default from configuration)
        prefix_len: how many offending octets to quote (default from configuration)
    """
    config = get_config().lowpan.discovery
    msg = ClassUnsupportedMsg(
        icmp_type=config.icmp_type if icmp_type is None else icmp_type,
        my_capability=my,
        offending_prefix=offending[:config.offending_prefix_len if prefix_len is None else prefix_len],
    )
    message = encode_class_unsupported(msg)
    checksum = icmpv6_checksum(src, dst, message)
    message = message[:2] + checksum.to_bytes(2, "big") + message[4:]
    return Ipv6Packet.build(src, dst, Icmpv6(data=message))


def handle_class_unsupported(
    table: "NeighborTable",
    msg: ClassUnsupportedMsg,
    from_: LinkAddress,
    now: int = 0,
) -> "NeighborTable":
    """Record the capability a neighbour reported in its error"""
    table.update(from_, msg.my_capability, NeighborSource.ICMP, now)
    logger.info("capability_learned", neighbor=str(from_), capability=str(msg.my_capability), source="icmp")
    return table


# ============================================================================
# ND options
# ============================================================================

def encode_nd_option(option: NdCapabilityOption) -> bytes:
    """
    Capability option; its length octet counts 4-octet units

    Linear: type, length 1, reserved octet, reserved(5)|level(3).
    FLEX: type, length 2, two reserved octets, 32-bit bitfield.
    """
    cap = option.capability
    if cap.is_linear:
        return bytes([ND_OPTION_CAPABILITY, 1, 0]) + _LINEAR_LEVEL.pack(0, int(cap.level))
    return bytes([ND_OPTION_CAPABILITY, 2, 0, 0]) + flex_encode(cap.features)


def decode_nd_option(data: bytes) -> NdCapabilityOption:
    """
    Raises:
        BadLength: size disagrees with the length octet or neither form fits
        ReservedBitsSet: reserved bits set or undefined level
        MalformedHeader: not a capability option
    """
    if len(data) < 2:
        raise BadLength("capability option truncated")
    if data[0] != ND_OPTION_CAPABILITY:
        raise MalformedHeader(f"option type {data[0]} is not a capability option")
    if data[1] * 4 != len(data):
        raise BadLength(f"option length {data[1]} units but {len(data)} octets")

    if len(data) == 4:
        reserved, level = _LINEAR_LEVEL.unpack(data[3:4])
        if data[2] or reserved:
            raise ReservedBitsSet("reserved bits in linear capability option")
        if level > max(CapabilityLevel):
            raise ReservedBitsSet(f"undefined capability level {level}")
        return NdCapabilityOption(capability=CapabilitySet.linear(level))
    if len(data) == 8:
        if data[2:4] != b"\x00\x00":
            raise ReservedBitsSet("reserved octets in FLEX capability option")
        return NdCapabilityOption(capability=CapabilitySet.flex(flex_decode(data[4:8])))
    raise BadLength(f"capability option of {len(data)} octets")


def encode_context_option(option: SixLowpanContextOption) -> bytes:
    size = option.wire_length
    flags = _CONTEXT_FLAGS.pack(0, int(option.compression), option.context_id)
    head = bytes([ND_OPTION_6LOWPAN_CONTEXT, size // 8, option.prefix_length]) + flags
    return head + struct.pack("!HH", 0, option.valid_lifetime) + option.prefix[:size - 8]


def decode_context_option(data: bytes) -> SixLowpanContextOption:
    if len(data) < 16 or data[0] != ND_OPTION_6LOWPAN_CONTEXT or data[1] * 8 != len(data):
        raise BadLength(f"6LoWPAN context option of {len(data)} octets")
    _, compression, cid = _CONTEXT_FLAGS.unpack(data[3:4])
    _, lifetime = struct.unpack("!HH", data[4:8])
    return SixLowpanContextOption(
        context_id=cid,
        compression=bool(compression),
        valid_lifetime=lifetime,
        prefix=data[8:],
        prefix_length=data[2],
    )


@dataclass(frozen=True)
class NdMessage:
    """Router Solicitation or Advertisement with the options we understand"""
    icmp_type: int
    capability: Optional[CapabilitySet] = None
    contexts: Tuple[SixLowpanContextOption, ...] = ()
    unknown_options: Tuple[int, ...] = ()

    @property
    def is_solicitation(self) -> bool:
        return self.icmp_type == ICMP_ROUTER_SOLICITATION


# Fixed part after type, code and checksum
_ND_FIXED = {ICMP_ROUTER_SOLICITATION: 4, ICMP_ROUTER_ADVERTISEMENT: 12}


def _nd_options(
    capability: Optional[CapabilitySet],
    contexts: Sequence[SixLowpanContextOption],
) -> bytes:
    out = b""
    if capability is not None:
        out += encode_nd_option(NdCapabilityOption(capability=capability))
    for option in contexts:
        out += encode_context_option(option)
    return out


def _nd_packet(icmp_type: int, src: Ipv6Address, dst: Ipv6Address, fixed: bytes, options: bytes) -> Ipv6Packet:
    message = bytes([icmp_type, 0, 0, 0]) + fixed + options
    checksum = icmpv6_checksum(src, dst, message)
    message = message[:2] + checksum.to_bytes(2, "big") + message[4:]
    return Ipv6Packet.build(src, dst, Icmpv6(data=message), hop_limit=ND_HOP_LIMIT)


def build_router_solicitation(
    src: Ipv6Address,
    capability: Optional[CapabilitySet] = None,
    contexts: Sequence[SixLowpanContextOption] = (),
    dst: Ipv6Address = ALL_ROUTERS,
) -> Ipv6Packet:
    return _nd_packet(ICMP_ROUTER_SOLICITATION, src, dst, bytes(4), _nd_options(capability, contexts))


def build_router_advertisement(
    src: Ipv6Address,
    capability: Optional[CapabilitySet] = None,
    contexts: Sequence[SixLowpanContextOption] = (),
    dst: Ipv6Address = ALL_NODES,
    router_lifetime: int = 0,
) -> Ipv6Packet:
    fixed = struct.pack("!BBHII", 64, 0, router_lifetime, 0, 0)
    return _nd_packet(ICMP_ROUTER_ADVERTISEMENT, src, dst, fixed, _nd_options(capability, contexts))


def parse_nd_message(packet: Ipv6Packet) -> Optional[NdMessage]:
    """
    Options of an RS/RA; None for any other packet

    Capability options count 4-octet units, every other option 8-octet
    units. Unknown options are skipped and reported.

    Raises:
        BadLength: truncated message or zero-length option
    """
    transport = packet.transport
    if not isinstance(transport, Icmpv6) or transport.icmp_type not in _ND_FIXED:
        return None
    data = transport.data
    pos = 4 + _ND_FIXED[transport.icmp_type]
    if len(data) < pos:
        raise BadLength("ND message truncated")

    capability: Optional[CapabilitySet] = None
    contexts: List[SixLowpanContextOption] = []
    unknown: List[int] = []
    while pos < len(data):
        if len(data) - pos < 2:
            raise BadLength("ND option truncated")
        kind, length = data[pos], data[pos + 1]
        size = length * (4 if kind == ND_OPTION_CAPABILITY else 8)
        if size == 0 or pos + size > len(data):
            raise BadLength(f"ND option {kind} with length {length}")
        chunk = data[pos:pos + size]
        if kind == ND_OPTION_CAPABILITY:
            capability = decode_nd_option(chunk).capability
        elif kind == ND_OPTION_6LOWPAN_CONTEXT:
            contexts.append(decode_context_option(chunk))
        else:
            unknown.append(kind)
        pos += size
    return NdMessage(
        icmp_type=transport.icmp_type,
        capability=capability,
        contexts=tuple(contexts),
        unknown_options=tuple(unknown),
    )


# ============================================================================
# Neighbour table
# ============================================================================

@dataclass
class NeighborTable:
    """
    Learned neighbour capabilities, least recently updated evicted first

    Entries older than `stale_after` ticks read back as Unknown.
    """
    capacity: int = field(default_factory=lambda: get_config().lowpan.discovery.neighbor_capacity)
    stale_after: Optional[int] = field(default_factory=lambda: get_config().lowpan.discovery.stale_after_ticks)
    entries: "OrderedDict[LinkAddress, NeighborEntry]" = field(default_factory=OrderedDict)
    evictions: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvariantViolation("neighbour table needs room for one entry")

    def lookup(self, link_addr: LinkAddress, now: int = 0) -> NeighborEntry:
        entry = self.entries.get(link_addr)
        if entry is None:
            return NeighborEntry.unknown(link_addr)
        if self.stale_after is not None and now - entry.last_updated > self.stale_after:
            return NeighborEntry.unknown(link_addr)
        return entry

    def update(
        self,
        link_addr: LinkAddress,
        capability: CapabilitySet,
        source: NeighborSource,
        now: int = 0,
    ) -> NeighborEntry:
        entry = NeighborEntry(link_addr=link_addr, capability=capability, source=source, last_updated=now)
        self.entries.pop(link_addr, None)
        while len(self.entries) >= self.capacity:
            evicted, _ = self.entries.popitem(last=False)
            self.evictions += 1
            logger.debug("neighbor_evicted", neighbor=str(evicted))
        self.entries[link_addr] = entry
        return entry

    def forget(self, link_addr: LinkAddress) -> None:
        self.entries.pop(link_addr, None)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, link_addr: object) -> bool:
        return link_addr in self.entries


# ============================================================================
# Per-neighbour state size
# ============================================================================

# Codes no real capability uses, standing for Unknown
_UNKNOWN_LEVEL = 0b111
_UNKNOWN_FLEX = 0xFFFFFFFF


def capability_state_bits(mode: CapabilityMode) -> int:
    """Bits of neighbour state per entry: 3 for a level, 32 for FLEX"""
    return LINEAR_STATE_BITS if CapabilityMode(mode) == CapabilityMode.LINEAR else FLEX_STATE_BITS


def neighbor_state_bytes(count: int, mode: CapabilityMode) -> int:
    return -(-count * capability_state_bits(mode) // 8)


def pack_neighbor_states(entries: Iterable[NeighborEntry], mode: CapabilityMode) -> bytes:
    """
    Pack capabilities as a node would store them

    Linear entries take 3 bits and FLEX entries 32 bits. Unknown neighbours
    use a code no capability can produce.

    Raises:
        InvariantViolation: a FLEX capability packed in linear mode
    """
    mode = CapabilityMode(mode)
    width = capability_state_bits(mode)
    values: List[int] = []
    for entry in entries:
        cap = entry.capability
        if mode == CapabilityMode.LINEAR:
            if cap is None:
                values.append(_UNKNOWN_LEVEL)
            elif not cap.is_linear:
                raise InvariantViolation(f"{cap} cannot be stored as a level")
            else:
                values.append(int(cap.level))
        else:
            values.append(_UNKNOWN_FLEX if cap is None else int.from_bytes(flex_encode(cap.feature_set), "big"))
    if not values:
        return b""
    words = np.array(values, dtype=">u4").view(np.uint8).reshape(-1, 4)
    bits = np.unpackbits(words, axis=1)[:, 32 - width:]
    return np.packbits(bits.reshape(-1)).tobytes()


def unpack_neighbor_states(data: bytes, count: int, mode: CapabilityMode) -> List[Optional[CapabilitySet]]:
    mode = CapabilityMode(mode)
    width = capability_state_bits(mode)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:count * width].reshape(count, width)
    padded = np.pad(bits, ((0, 0), (32 - width, 0)))
    words = np.packbits(padded, axis=1).view(">u4").reshape(-1)
    out: List[Optional[CapabilitySet]] = []
    for value in words.tolist():
        if mode == CapabilityMode.LINEAR:
            out.append(None if value == _UNKNOWN_LEVEL else CapabilitySet.linear(value))
        else:
            out.append(None if value == _UNKNOWN_FLEX else CapabilitySet.flex(flex_decode(value.to_bytes(4, "big"))))
    return out


__all__ = [
    "ALL_NODES",
    "ALL_ROUTERS",
    "NdMessage",
    "NeighborTable",
    "build_class_unsupported",
    "build_router_advertisement",
    "build_router_solicitation",
    "capability_state_bits",
    "decode_context_option",
    "decode_nd_option",
    "encode_class_unsupported",
    "encode_context_option",
    "encode_nd_option",
    "handle_class_unsupported",
    "neighbor_state_bytes",
    "pack_neighbor_states",
    "parse_class_unsupported",
    "parse_nd_message",
    "unpack_neighbor_states",
]
