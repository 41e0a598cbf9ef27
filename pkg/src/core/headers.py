"""
6LoWPAN dispatch values and the RFC 4944 mesh, broadcast and fragment headers
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple

import bitstruct

from src.core.errors import InvariantViolation, MalformedHeader, UnknownDispatch
from src.models.codec import BroadcastHeader, FragHeader, FragKind, MeshHeader
from src.models.packet import LinkAddress

DISPATCH_IPV6 = 0x41
DISPATCH_BC0 = 0x50

_FRAG1 = bitstruct.compile("u5u11u16")
_FRAGN = bitstruct.compile("u5u11u16u8")
_MESH = bitstruct.compile("u2u1u1u4")


class DispatchKind(str, Enum):
    IPV6 = "ipv6"
    IPHC = "iphc"
    FRAG1 = "frag1"
    FRAGN = "fragn"
    MESH = "mesh"
    BC0 = "bc0"


def dispatch_kind(octet: int) -> DispatchKind:
    """
    Classify the first octet of a 6LoWPAN header

    Raises:
        UnknownDispatch: NALP, reserved and unassigned patterns
    """
    if octet == DISPATCH_IPV6:
        return DispatchKind.IPV6
    if octet == DISPATCH_BC0:
        return DispatchKind.BC0
    if octet & 0xE0 == 0x60:
        return DispatchKind.IPHC
    if octet & 0xF8 == 0xC0:
        return DispatchKind.FRAG1
    if octet & 0xF8 == 0xE0:
        return DispatchKind.FRAGN
    if octet & 0xC0 == 0x80:
        return DispatchKind.MESH
    raise UnknownDispatch(f"dispatch octet {octet:#04x}")


# ============================================================================
# Fragment headers
# ============================================================================

def encode_frag_header(h: FragHeader) -> bytes:
    if h.kind == FragKind.FIRST:
        return _FRAG1.pack(0b11000, h.datagram_size, h.datagram_tag)
    return _FRAGN.pack(0b11100, h.datagram_size, h.datagram_tag, h.datagram_offset)


def parse_frag_header(payload: bytes) -> Tuple[FragHeader, bytes]:
    if not payload:
        raise MalformedHeader("empty fragment")
    kind = dispatch_kind(payload[0])
    if kind == DispatchKind.FRAG1:
        if len(payload) < 4:
            raise MalformedHeader("FRAG1 header truncated")
        _, size, tag = _FRAG1.unpack(payload[:4])
        return FragHeader(kind=FragKind.FIRST, datagram_size=size, datagram_tag=tag), payload[4:]
    if kind == DispatchKind.FRAGN:
        if len(payload) < 5:
            raise MalformedHeader("FRAGN header truncated")
        _, size, tag, offset = _FRAGN.unpack(payload[:5])
        header = FragHeader(kind=FragKind.SUBSEQUENT, datagram_size=size, datagram_tag=tag, datagram_offset=offset)
        return header, payload[5:]
    raise MalformedHeader(f"not a fragment header: {payload[0]:#04x}")


# ============================================================================
# Mesh and broadcast
# ============================================================================

def encode_mesh_header(h: MeshHeader) -> bytes:
    if h.hops_left < 1:
        raise InvariantViolation("mesh header emitted with no hops left")
    v = int(h.originator.is_short)
    f = int(h.final.is_short)
    return _MESH.pack(0b10, v, f, h.hops_left) + h.originator.value + h.final.value


def encode_broadcast_header(h: BroadcastHeader) -> bytes:
    return bytes([DISPATCH_BC0, h.sequence])


def _link_address(raw: bytes, short: bool) -> LinkAddress:
    return LinkAddress(mode="short" if short else "extended", value=raw)


def parse_mesh_broadcast(
    payload: bytes,
) -> Tuple[Optional[MeshHeader], Optional[BroadcastHeader], bytes]:
    """
    Strip an optional mesh header then an optional LOWPAN_BC0 header

    Returns:
        (mesh, broadcast, remainder); the remainder starts with a fragment,
        IPHC or uncompressed IPv6 dispatch

    Raises:
        MalformedHeader: truncated headers, deep-hops encoding, or a
            remainder that carries no datagram dispatch
    """
    mesh: Optional[MeshHeader] = None
    bc: Optional[BroadcastHeader] = None
    rest = payload

    if rest and rest[0] & 0xC0 == 0x80:
        _, v, f, hops = _MESH.unpack(rest[:1])
        if hops == 0xF:
            raise MalformedHeader("deep hops-left encoding is not supported")
        orig_len = 2 if v else 8
        final_len = 2 if f else 8
        if len(rest) < 1 + orig_len + final_len:
            raise MalformedHeader("mesh header truncated")
        originator = _link_address(rest[1:1 + orig_len], bool(v))
        final = _link_address(rest[1 + orig_len:1 + orig_len + final_len], bool(f))
        mesh = MeshHeader(hops_left=hops, originator=originator, final=final)
        rest = rest[1 + orig_len + final_len:]

    if rest and rest[0] == DISPATCH_BC0:
        if len(rest) < 2:
            raise MalformedHeader("broadcast header truncated")
        bc = BroadcastHeader(sequence=rest[1])
        rest = rest[2:]

    if not rest:
        raise MalformedHeader("no datagram after mesh/broadcast headers")
    try:
        kind = dispatch_kind(rest[0])
    except UnknownDispatch as e:
        raise MalformedHeader(str(e)) from e
    if kind in (DispatchKind.MESH, DispatchKind.BC0):
        raise MalformedHeader(f"{kind.value} header out of order")
    return mesh, bc, rest
