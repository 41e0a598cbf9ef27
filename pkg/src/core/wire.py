"""
Uncompressed IPv6 wire format

Bit-exact serialization and parsing of the 40-octet IPv6 header, the
extension chain and UDP/ICMPv6/raw transports, plus the one's-complement
checksums the codec needs to regenerate elided UDP checksums.
"""

from __future__ import annotations

import struct
from typing import List, Optional, Tuple

import bitstruct

from src.core.errors import BadVersion, InvariantViolation, MalformedHeader, TruncatedPacket
from src.models.packet import (
    IPV6_HEADER_LEN,
    NO_TRANSPORT,
    PROTO_FRAGMENT,
    PROTO_ICMPV6,
    PROTO_IPV6,
    PROTO_NO_NEXT_HEADER,
    PROTO_UDP,
    ExtensionHeader,
    ExtensionKind,
    Icmpv6,
    Ipv6Address,
    Ipv6Header,
    Ipv6Packet,
    Raw,
    Udp,
    UdpHeader,
)

# version | traffic class | flow label | payload length | next header | hop limit
_FIXED = bitstruct.compile("u4u8u20u16u8u8")
_UDP = struct.Struct("!HHHH")


# ============================================================================
# Checksums
# ============================================================================

def ones_complement_sum(data: bytes) -> int:
    """16-bit one's-complement sum of `data`, odd length padded with zero"""
    if len(data) % 2:
        data = data + b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def transport_checksum(src: Ipv6Address, dst: Ipv6Address, protocol: int, segment: bytes) -> int:
    """
    Checksum over the IPv6 pseudo-header and an upper-layer segment

    The segment's own checksum field must already be zero.
    """
    pseudo = src.value + dst.value + struct.pack("!I3xB", len(segment), protocol)
    return ~ones_complement_sum(pseudo + segment) & 0xFFFF


def udp_checksum(src: Ipv6Address, dst: Ipv6Address, udp: UdpHeader, payload: bytes) -> int:
    """
    UDP checksum per RFC 8200 pseudo-header rules

    A computed value of zero is transmitted as 0xFFFF.
    """
    segment = _UDP.pack(udp.src_port, udp.dst_port, udp.length, 0) + payload
    value = transport_checksum(src, dst, PROTO_UDP, segment)
    return value or 0xFFFF


def icmpv6_checksum(src: Ipv6Address, dst: Ipv6Address, message: bytes) -> int:
    zeroed = message[:2] + b"\x00\x00" + message[4:]
    return transport_checksum(src, dst, PROTO_ICMPV6, zeroed)


def with_udp_checksum(packet: Ipv6Packet) -> Ipv6Packet:
    """Copy of `packet` whose outer UDP checksum is valid"""
    transport = packet.transport
    if not isinstance(transport, Udp):
        return packet
    value = udp_checksum(packet.src, packet.dst, transport.header, transport.payload)
    header = transport.header.model_copy(update={"checksum": value})
    return packet.model_copy(update={"transport": transport.model_copy(update={"header": header})})


# ============================================================================
# Serialization
# ============================================================================

def _check_chain(p: Ipv6Packet) -> None:
    exts = p.extensions
    first = exts[0].protocol if exts else p.transport.protocol
    if p.header.next_header != first:
        raise InvariantViolation(f"header next_header {p.header.next_header} but chain starts with {first}")
    for i, ext in enumerate(exts):
        if ext.kind == ExtensionKind.TUNNELED_IPV6:
            if i != len(exts) - 1:
                raise InvariantViolation("tunneled IPv6 must be the last extension")
            if ext.next_header != PROTO_NO_NEXT_HEADER or p.transport.wire_length:
                raise InvariantViolation("nothing may follow a tunneled IPv6 datagram")
            continue
        following = exts[i + 1].protocol if i + 1 < len(exts) else p.transport.protocol
        if ext.next_header != following:
            raise InvariantViolation(f"{ext.kind.value} next_header {ext.next_header}, expected {following}")
    if p.header.payload_length != p.payload_wire_length:
        raise InvariantViolation(
            f"payload_length {p.header.payload_length} but chain carries {p.payload_wire_length}"
        )
    transport = p.transport
    if isinstance(transport, Udp) and transport.header.length != 8 + len(transport.payload):
        raise InvariantViolation("UDP length does not match payload")


def serialize_header(h: Ipv6Header) -> bytes:
    fixed = _FIXED.pack(6, h.traffic_class, h.flow_label, h.payload_length, h.next_header, h.hop_limit)
    return fixed + h.src.value + h.dst.value


def serialize_extension(ext: ExtensionHeader) -> bytes:
    if ext.kind == ExtensionKind.TUNNELED_IPV6:
        return ext.body
    if ext.kind == ExtensionKind.FRAGMENT:
        return bytes([ext.next_header, 0]) + ext.body
    return bytes([ext.next_header, (2 + len(ext.body)) // 8 - 1]) + ext.body


def serialize_transport(transport) -> bytes:
    if isinstance(transport, Udp):
        h = transport.header
        return _UDP.pack(h.src_port, h.dst_port, h.length, h.checksum) + transport.payload
    return transport.data


def serialize_ipv6(p: Ipv6Packet) -> bytes:
    """
    Encode a packet in the uncompressed IPv6 wire format

    Raises:
        InvariantViolation: next-header chain or lengths are inconsistent
    """
    _check_chain(p)
    tunnel = p.tunneled
    if tunnel is not None:
        inner = parse_ipv6(tunnel.body)
        if inner.wire_length != len(tunnel.body):
            raise InvariantViolation("tunneled body carries trailing octets")
    parts = [serialize_header(p.header)]
    parts.extend(serialize_extension(e) for e in p.extensions)
    parts.append(serialize_transport(p.transport))
    return b"".join(parts)


# ============================================================================
# Parsing
# ============================================================================

def parse_header(data: bytes) -> Ipv6Header:
    if len(data) < IPV6_HEADER_LEN:
        raise TruncatedPacket(f"{len(data)} octets, IPv6 header needs {IPV6_HEADER_LEN}")
    version, tc, fl, plen, nh, hlim = _FIXED.unpack(data[:8])
    if version != 6:
        raise BadVersion(f"version nibble {version}")
    return Ipv6Header(
        traffic_class=tc,
        flow_label=fl,
        payload_length=plen,
        next_header=nh,
        hop_limit=hlim,
        src=Ipv6Address(value=data[8:24]),
        dst=Ipv6Address(value=data[24:40]),
    )


def _parse_chain(payload: bytes, nh: int) -> Tuple[List[ExtensionHeader], object]:
    exts: List[ExtensionHeader] = []
    pos = 0
    while True:
        kind = ExtensionKind.for_protocol(nh)
        if kind is None:
            break
        if kind == ExtensionKind.TUNNELED_IPV6:
            body = payload[pos:]
            inner = parse_ipv6(body)
            if inner.wire_length != len(body):
                raise MalformedHeader("octets follow the tunneled datagram")
            exts.append(ExtensionHeader(kind=kind, next_header=PROTO_NO_NEXT_HEADER, body=body))
            return exts, NO_TRANSPORT
        if len(payload) - pos < 2:
            raise TruncatedPacket(f"{kind.value} header truncated")
        next_nh = payload[pos]
        size = 8 if nh == PROTO_FRAGMENT else (payload[pos + 1] + 1) * 8
        if len(payload) - pos < size:
            raise TruncatedPacket(f"{kind.value} header truncated")
        if nh == PROTO_FRAGMENT and payload[pos + 1] != 0:
            raise MalformedHeader("fragment header reserved octet set")
        exts.append(ExtensionHeader(kind=kind, next_header=next_nh, body=payload[pos + 2:pos + size]))
        pos += size
        nh = next_nh

    rest = payload[pos:]
    if nh == PROTO_UDP:
        if len(rest) < 8:
            raise TruncatedPacket("UDP header truncated")
        sport, dport, length, checksum = _UDP.unpack(rest[:8])
        if length != len(rest):
            raise MalformedHeader(f"UDP length {length} but {len(rest)} octets present")
        header = UdpHeader(src_port=sport, dst_port=dport, length=length, checksum=checksum)
        return exts, Udp(header=header, payload=rest[8:])
    if nh == PROTO_ICMPV6:
        return exts, Icmpv6(data=rest)
    return exts, Raw(protocol=nh, data=rest)


def parse_ipv6(data: bytes) -> Ipv6Packet:
    """
    Decode an uncompressed IPv6 datagram from the start of `data`

    Octets past 40 + payload_length are ignored. Unknown next headers are
    carried as a Raw transport.

    Raises:
        TruncatedPacket: fewer octets than the header chain declares
        BadVersion: first nibble is not 6
    """
    header = parse_header(data)
    end = IPV6_HEADER_LEN + header.payload_length
    if len(data) < end:
        raise TruncatedPacket(f"payload_length {header.payload_length} but {len(data) - 40} octets present")
    exts, transport = _parse_chain(data[IPV6_HEADER_LEN:end], header.next_header)
    return Ipv6Packet(header=header, extensions=tuple(exts), transport=transport)


def tunneled_packet(packet: Ipv6Packet) -> Optional[Ipv6Packet]:
    tunnel = packet.tunneled
    return parse_ipv6(tunnel.body) if tunnel is not None else None


def header_chain_length(packet: Ipv6Packet) -> int:
    """Octets of IPv6 headers, extensions (through tunnels) and the transport header"""
    total = 0
    current: Optional[Ipv6Packet] = packet
    while current is not None:
        total += IPV6_HEADER_LEN
        nxt = None
        for ext in current.extensions:
            if ext.kind == ExtensionKind.TUNNELED_IPV6:
                nxt = parse_ipv6(ext.body)
            else:
                total += ext.wire_length
        if nxt is None:
            transport = current.transport
            if isinstance(transport, Udp):
                total += 8
            elif isinstance(transport, Icmpv6):
                total += min(4, len(transport.data))
        current = nxt
    return total


def raw_chain_end(data: bytes, pos: int, nh: Optional[int]) -> Optional[int]:
    """
    End offset of the uncompressed header chain starting at `pos`

    Returns None when the headers continue past the end of `data`.
    """
    while nh is not None:
        kind = ExtensionKind.for_protocol(nh)
        if nh == PROTO_IPV6:
            if len(data) - pos < IPV6_HEADER_LEN:
                return None
            nh = data[pos + 6]
            pos += IPV6_HEADER_LEN
        elif kind is not None:
            if len(data) - pos < 2:
                return None
            size = 8 if nh == PROTO_FRAGMENT else (data[pos + 1] + 1) * 8
            nh = data[pos]
            pos += size
            if pos > len(data):
                return None
        elif nh == PROTO_UDP:
            pos += 8
            nh = None
        elif nh == PROTO_ICMPV6:
            pos += 4
            nh = None
        else:
            nh = None
    return pos if pos <= len(data) else None
