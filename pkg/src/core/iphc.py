"""
LOWPAN_IPHC compression and decompression

Compression picks, field by field, the shortest encoding inside the allowed
feature set that reconstructs the original exactly, then walks a fixed
relaxation ladder when the result breaks the decompression bound or cannot
be fragmented legally. Decompression is split in two stages so the
reassembler can expand a first fragment before the rest of the datagram
has arrived.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import bitstruct

from src.core.capability import check_descriptor, classify
from src.core.encoding import (
    EID_IPV6,
    EXT_NHC,
    HLIM_VALUES,
    IPHC_BASE,
    UDP_NHC,
    IphcRecord,
    UdpRecord,
    parse_chain,
    parse_iphc,
)
from src.core.errors import CannotRepresent, MalformedIphc, NoSourceAddress, TruncatedPacket
from src.core.headers import DISPATCH_IPV6, DispatchKind, dispatch_kind, parse_frag_header, parse_mesh_broadcast
from src.core.wire import (
    header_chain_length,
    parse_ipv6,
    serialize_ipv6,
    transport_checksum,
    udp_checksum,
)
from src.models.capability import Feature, FeatureSet
from src.models.codec import CompressedDatagram, ContextEntry, ContextTable, DecompressionLimits
from src.models.packet import (
    IPV6_HEADER_LEN,
    LINK_LOCAL_PREFIX,
    PROTO_UDP,
    ExtensionHeader,
    ExtensionKind,
    Ipv6Address,
    Ipv6Header,
    Ipv6Packet,
    LinkAddress,
    Udp,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

SHORT_IID_PREFIX = bytes.fromhex("000000fffe00")

_TF_FULL = bitstruct.compile("u2u6u4u20")
_TF_NO_DSCP = bitstruct.compile("u2u2u20")
_TF_NO_FLOW = bitstruct.compile("u2u6")
_FIXED = bitstruct.compile("u4u8u20u16u8u8")
_UDP = struct.Struct("!HHHH")

_EXT_EID = {
    ExtensionKind.HOP_BY_HOP: 0,
    ExtensionKind.ROUTING: 1,
    ExtensionKind.FRAGMENT: 2,
    ExtensionKind.DESTINATION_OPTIONS: 3,
    ExtensionKind.MOBILITY: 4,
}
_EID_PROTOCOL = {0: 0, 1: 43, 2: 44, 3: 60, 4: 135, EID_IPV6: 41}
_MAX_NHC_BODY = 0xFF


# ============================================================================
# Address reconstruction (shared by both directions)
# ============================================================================

def _overlay_context(address: bytes, context: ContextEntry) -> bytes:
    """Replace the leading prefix_length bits of `address` with the context prefix"""
    if context.prefix_length == 0:
        return address
    mask = ((1 << context.prefix_length) - 1) << (128 - context.prefix_length)
    value = int.from_bytes(address, "big") & ~mask | int.from_bytes(context.prefix, "big") & mask
    return value.to_bytes(16, "big")


def unicast_address(
    stateful: int,
    mode: int,
    inline: bytes,
    iid: Optional[bytes],
    context: Optional[ContextEntry],
) -> bytes:
    """
    Rebuild a unicast address from its IPHC mode

    Raises:
        MalformedIphc: the mode needs a link-derived IID or a context that is absent
    """
    if mode == 0:
        return bytes(16) if stateful else inline
    if mode == 1:
        tail = inline
    elif mode == 2:
        tail = SHORT_IID_PREFIX + inline
    else:
        if iid is None:
            raise MalformedIphc("address derives from an unknown link address")
        tail = iid
    if not stateful:
        return LINK_LOCAL_PREFIX + tail
    if context is None:
        raise MalformedIphc("stateful address with no provisioned context")
    return _overlay_context(bytes(8) + tail, context)


def multicast_address(stateful: int, mode: int, inline: bytes, context: Optional[ContextEntry]) -> bytes:
    if stateful:
        if context is None:
            raise MalformedIphc("stateful multicast address with no provisioned context")
        return bytes([0xFF, inline[0], inline[1], context.prefix_length]) + context.prefix[:8] + inline[2:6]
    if mode == 0:
        return inline
    if mode == 1:
        return bytes([0xFF, inline[0]]) + bytes(9) + inline[1:6]
    if mode == 2:
        return bytes([0xFF, inline[0]]) + bytes(11) + inline[1:4]
    return b"\xff\x02" + bytes(13) + inline[0:1]


# ============================================================================
# Compression
# ============================================================================

@dataclass(frozen=True)
class _AddressChoice:
    stateful: int
    mode: int
    cid: int
    inline: bytes
    features: Tuple[Feature, ...]

    @property
    def rank(self) -> Tuple[int, int, int, int]:
        cost = len(self.inline) + (1 if self.cid else 0)
        highest = max((int(f) for f in self.features), default=-1)
        return cost, highest, self.stateful, self.cid


@dataclass(frozen=True)
class _Relaxation:
    """One rung of the compression ladder"""
    elide_padding: bool = True
    nhc_budget: Optional[int] = None
    inline_hop_limit: bool = False
    inline_traffic_class: bool = False
    inline_dst: bool = False
    inline_src: bool = False


def _ladder(nhc_items: int) -> Iterator[_Relaxation]:
    yield _Relaxation()
    yield _Relaxation(elide_padding=False)
    for keep in range(nhc_items - 1, -1, -1):
        yield _Relaxation(elide_padding=False, nhc_budget=keep)
    relaxed = {}
    for step in ("inline_hop_limit", "inline_traffic_class", "inline_dst", "inline_src"):
        relaxed[step] = True
        yield _Relaxation(elide_padding=False, nhc_budget=0, **relaxed)


def _source_choices(
    address: Ipv6Address,
    ctx: ContextTable,
    iid: Optional[bytes],
    short_link: bool,
) -> List[_AddressChoice]:
    a = address.value
    choices = [_AddressChoice(0, 0, 0, a, ())]
    if address.is_unspecified:
        choices.append(_AddressChoice(1, 0, 0, b"", (Feature.STATELESS_SRC_DECOMPRESSION,)))
        return choices
    for mode, inline in ((1, a[8:]), (2, a[14:]), (3, b"")):
        if mode == 3 and iid is None:
            continue
        extra = (Feature.SHORT_LINK_ADDRESS,) if mode == 3 and short_link else ()
        if unicast_address(0, mode, inline, iid, None) == a:
            choices.append(_AddressChoice(0, mode, 0, inline, (Feature.STATELESS_SRC_DECOMPRESSION,) + extra))
        for cid, entry in sorted(ctx.entries.items()):
            if unicast_address(1, mode, inline, iid, entry) == a:
                choices.append(_AddressChoice(1, mode, cid, inline, (Feature.STATEFUL_UNICAST,) + extra))
    return choices


def _destination_choices(
    address: Ipv6Address,
    ctx: ContextTable,
    iid: Optional[bytes],
    short_link: bool,
) -> List[_AddressChoice]:
    a = address.value
    choices = [_AddressChoice(0, 0, 0, a, ())]
    if address.is_multicast:
        for mode, inline in ((1, a[1:2] + a[11:16]), (2, a[1:2] + a[13:16]), (3, a[15:16])):
            if multicast_address(0, mode, inline, None) == a:
                choices.append(_AddressChoice(0, mode, 0, inline, (Feature.STATELESS_MULTICAST,)))
        inline = a[1:3] + a[12:16]
        for cid, entry in sorted(ctx.entries.items()):
            if multicast_address(1, 0, inline, entry) == a:
                choices.append(_AddressChoice(1, 0, cid, inline, (Feature.STATEFUL_MULTICAST,)))
        return choices
    for mode, inline in ((1, a[8:]), (2, a[14:]), (3, b"")):
        if mode == 3 and iid is None:
            continue
        extra: Tuple[Feature, ...] = ()
        if mode == 3:
            extra = (Feature.ADDRESS_AUTOCONFIGURATION,)
            if short_link:
                extra += (Feature.SHORT_LINK_ADDRESS,)
        if unicast_address(0, mode, inline, iid, None) == a:
            choices.append(_AddressChoice(0, mode, 0, inline, (Feature.STATELESS_DST_COMPRESSION,) + extra))
        for cid, entry in sorted(ctx.entries.items()):
            if unicast_address(1, mode, inline, iid, entry) == a:
                choices.append(_AddressChoice(1, mode, cid, inline, (Feature.STATEFUL_UNICAST,) + extra))
    return choices


def _best(choices: Sequence[_AddressChoice], allowed: FeatureSet, inline_only: bool) -> _AddressChoice:
    usable = [
        c for c in choices
        if all(f in allowed for f in c.features) and not (inline_only and (c.stateful or c.mode))
    ]
    return min(usable, key=lambda c: c.rank)


def _traffic_class_field(h: Ipv6Header, allowed: FeatureSet, inline_only: bool) -> Tuple[int, bytes]:
    ecn, dscp, flow = h.traffic_class & 0x03, h.traffic_class >> 2, h.flow_label
    if not inline_only:
        tc_ok = Feature.TRAFFIC_CLASS in allowed
        fl_ok = Feature.FLOW_LABEL in allowed
        if tc_ok and fl_ok and h.traffic_class == 0 and flow == 0:
            return 3, b""
        if fl_ok and flow == 0:
            return 2, _TF_NO_FLOW.pack(ecn, dscp)
        if tc_ok and dscp == 0:
            return 1, _TF_NO_DSCP.pack(ecn, 0, flow)
    return 0, _TF_FULL.pack(ecn, dscp, 0, flow)


def _hop_limit_field(hop_limit: int, allowed: FeatureSet, inline_only: bool) -> Tuple[int, bytes]:
    if not inline_only and Feature.HOP_LIMIT in allowed:
        for code, value in HLIM_VALUES.items():
            if value == hop_limit:
                return code, b""
    return 0, bytes([hop_limit])


def _encode_iphc(
    h: Ipv6Header,
    nh_compressed: bool,
    ctx: ContextTable,
    allowed: FeatureSet,
    relax: _Relaxation,
    src_iid: Optional[bytes],
    dst_iid: Optional[bytes],
    short_src: bool,
    short_dst: bool,
) -> bytes:
    tf, tf_inline = _traffic_class_field(h, allowed, relax.inline_traffic_class)
    hlim, hlim_inline = _hop_limit_field(h.hop_limit, allowed, relax.inline_hop_limit)
    src = _best(_source_choices(h.src, ctx, src_iid, short_src), allowed, relax.inline_src)
    dst = _best(_destination_choices(h.dst, ctx, dst_iid, short_dst), allowed, relax.inline_dst)
    cid = 1 if src.cid or dst.cid else 0

    out = bytearray(IPHC_BASE.pack(
        0b011, tf, int(nh_compressed), hlim,
        cid, src.stateful, src.mode, int(h.dst.is_multicast), dst.stateful, dst.mode,
    ))
    if cid:
        out.append(src.cid << 4 | dst.cid)
    out += tf_inline
    if not nh_compressed:
        out.append(h.next_header)
    out += hlim_inline + src.inline + dst.inline
    return bytes(out)


def trailing_padding(body: bytes) -> int:
    """
    Octets of canonical trailing padding in an options body, or 0

    Canonical means exactly what decompression regenerates: a single Pad1
    for one octet, one zero-filled PadN otherwise.
    """
    pos = 0
    last_start = last_type = None
    while pos < len(body):
        option = body[pos]
        if option == 0:
            size = 1
        elif pos + 1 < len(body):
            size = 2 + body[pos + 1]
        else:
            return 0
        if pos + size > len(body):
            return 0
        last_start, last_type = pos, option
        pos += size
    if last_start is None:
        return 0
    pad = len(body) - last_start
    if last_type == 0 and pad == 1:
        return 1
    if last_type == 1 and 2 <= pad <= 7 and not any(body[last_start + 2:]):
        return pad
    return 0


def padding_for(length: int) -> bytes:
    """Canonical padding that aligns an options header of `length` octets"""
    pad = -length % 8
    if pad == 0:
        return b""
    if pad == 1:
        return b"\x00"
    return bytes([1, pad - 2]) + bytes(pad - 2)


def _encode_ext(ext: ExtensionHeader, next_compressed: bool, elide_padding: bool) -> bytes:
    body = ext.body
    if elide_padding and ext.kind.has_options:
        pad = trailing_padding(body)
        if pad:
            body = body[:-pad]
    out = bytearray(EXT_NHC.pack(0b1110, _EXT_EID[ext.kind], int(next_compressed)))
    if not next_compressed:
        out.append(ext.next_header)
    out.append(len(body))
    return bytes(out + body)


def _encode_udp(udp: Udp, allowed: FeatureSet, src: Ipv6Address, dst: Ipv6Address) -> bytes:
    sport, dport = udp.header.src_port, udp.header.dst_port
    ports, inline = 0, _UDP.pack(sport, dport, 0, 0)[:4]
    if Feature.UDP_PORTS in allowed:
        if sport & 0xFFF0 == 0xF0B0 and dport & 0xFFF0 == 0xF0B0:
            ports, inline = 3, bytes([(sport & 0x0F) << 4 | dport & 0x0F])
        elif dport & 0xFF00 == 0xF000:
            ports, inline = 1, sport.to_bytes(2, "big") + bytes([dport & 0xFF])
        elif sport & 0xFF00 == 0xF000:
            ports, inline = 2, bytes([sport & 0xFF]) + dport.to_bytes(2, "big")
    elide = (
        Feature.UDP_CHECKSUM_ELISION in allowed
        and udp.header.checksum == udp_checksum(src, dst, udp.header, udp.payload)
    )
    out = UDP_NHC.pack(0b11110, int(elide), ports) + inline
    if not elide:
        out += udp.header.checksum.to_bytes(2, "big")
    return out


def _compressible(ext: ExtensionHeader, allowed: FeatureSet) -> bool:
    if ext.kind == ExtensionKind.MOBILITY:
        return Feature.MOBILITY_HEADER in allowed and len(ext.body) <= _MAX_NHC_BODY
    return Feature.EXTENSION_HEADERS in allowed and len(ext.body) <= _MAX_NHC_BODY


@dataclass
class _Encoder:
    """Walks a datagram and its tunnels, emitting IPHC and NHC headers"""
    ctx: ContextTable
    allowed: FeatureSet
    link_src: Optional[LinkAddress]
    link_dst: Optional[LinkAddress]
    max_inner_depth: int
    nhc_items: int = field(default=0, init=False)

    def _plan(self, p: Ipv6Packet, depth: int) -> list:
        """Leading items of `p`'s chain that NHC can carry"""
        items: list = []
        for ext in p.extensions:
            if ext.kind == ExtensionKind.TUNNELED_IPV6:
                if Feature.TUNNELED_IPV6 in self.allowed and depth < self.max_inner_depth:
                    items.append(ext)
                return items
            if not _compressible(ext, self.allowed):
                return items
            items.append(ext)
        udp_ok = Feature.UDP_NHC in self.allowed and Feature.UDP_LENGTH_ELISION in self.allowed
        if isinstance(p.transport, Udp) and udp_ok:
            items.append(p.transport)
        return items

    def encode(self, p: Ipv6Packet, relax: _Relaxation) -> Tuple[bytes, int]:
        """Returns (compressed header octets, uncompressed octets they replace)"""
        out = bytearray()
        replaced = 0
        budget = relax.nhc_budget
        used = 0
        current: Optional[Ipv6Packet] = p
        depth = 0
        src_iid = self.link_src.iid() if self.link_src else None
        dst_iid = self.link_dst.iid() if self.link_dst else None
        short_src = bool(self.link_src and self.link_src.is_short)
        short_dst = bool(self.link_dst and self.link_dst.is_short)
        elide = relax.elide_padding and Feature.EXTENSION_PADDING_ELISION in self.allowed

        while current is not None:
            items = self._plan(current, depth)
            if budget is not None:
                items = items[:max(0, budget - used)]
            used += len(items)
            out += _encode_iphc(
                current.header, bool(items), self.ctx, self.allowed, relax,
                src_iid, dst_iid, short_src and depth == 0, short_dst and depth == 0,
            )
            replaced += IPV6_HEADER_LEN
            inner: Optional[Ipv6Packet] = None
            for i, item in enumerate(items):
                if isinstance(item, Udp):
                    out += _encode_udp(item, self.allowed, current.src, current.dst)
                    replaced += 8
                elif item.kind == ExtensionKind.TUNNELED_IPV6:
                    out.append(0xEE)
                    inner = parse_ipv6(item.body)
                else:
                    out += _encode_ext(item, i + 1 < len(items), elide)
                    replaced += item.wire_length
            if inner is not None:
                src_iid, dst_iid = current.src.iid, current.dst.iid
                depth += 1
            current = inner

        self.nhc_items = max(self.nhc_items, used)
        return bytes(out), replaced


def _past_first_fragment(p: Ipv6Packet, data_len: int, c: int, h: int, mtu_payload: Optional[int]) -> bool:
    if mtu_payload is None or data_len <= mtu_payload:
        return False
    k = ((mtu_payload - 4 - c + h) // 8) * 8 - h
    return header_chain_length(p) - h > k


def compress_uncompressed(p: Ipv6Packet, link_src=None, link_dst=None) -> CompressedDatagram:
    """The 0x41 encoding: dispatch followed by the datagram verbatim"""
    data = bytes([DISPATCH_IPV6]) + serialize_ipv6(p)
    descriptor = classify(data, link_src=link_src, link_dst=link_dst)
    return CompressedDatagram(data=data, descriptor=descriptor, compressed_header_len=1, uncompressed_header_len=0)


def compress(
    p: Ipv6Packet,
    ctx: ContextTable,
    allowed: FeatureSet,
    limits: DecompressionLimits,
    *,
    link_src: Optional[LinkAddress] = None,
    link_dst: Optional[LinkAddress] = None,
    compress_inner: bool = False,
    mtu_payload: Optional[int] = None,
) -> CompressedDatagram:
    """
    Most compressive encoding of `p` inside `allowed` and `limits`

    Args:
        p: datagram to encode
        ctx: shared compression contexts
        allowed: features the receiver is known to handle
        limits: decompression bounds the output must respect
        link_src, link_dst: 802.15.4 addresses the outer header may derive from
        compress_inner: compress tunneled headers (up to limits.max_tunnel_depth)
        mtu_payload: frame payload size; enables the first-fragment rule

    Raises:
        CannotRepresent: neither IPHC nor uncompressed IPv6 is usable
    """
    raw = serialize_ipv6(p)
    iphc_ok = Feature.IPHC_DISPATCH in allowed and Feature.IPV6_LENGTH_VERSION_ELISION in allowed
    if iphc_ok:
        encoder = _Encoder(
            ctx=ctx,
            allowed=allowed,
            link_src=link_src,
            link_dst=link_dst,
            max_inner_depth=limits.max_tunnel_depth if compress_inner else 0,
        )
        encoder.encode(p, _Relaxation())
        for relax in _ladder(encoder.nhc_items):
            header, replaced = encoder.encode(p, relax)
            data = header + raw[replaced:]
            descriptor = classify(data, link_src=link_src, link_dst=link_dst)
            if not descriptor.features_used.issubset(allowed):
                continue
            if descriptor.decompression_expansion > limits.max_expansion:
                continue
            if (
                Feature.COMPRESSION_PAST_FIRST_FRAGMENT not in allowed
                and _past_first_fragment(p, len(data), len(header), replaced, mtu_payload)
            ):
                continue
            logger.debug(
                "datagram_compressed",
                on_air=len(data),
                expansion=descriptor.decompression_expansion,
                features=descriptor.features_used.labels(),
            )
            return CompressedDatagram(
                data=data,
                descriptor=descriptor,
                compressed_header_len=len(header),
                uncompressed_header_len=replaced,
            )

    if Feature.UNCOMPRESSED_IPV6 in allowed:
        return compress_uncompressed(p, link_src, link_dst)
    raise CannotRepresent(f"no encoding within {allowed} carries {p}")


# ============================================================================
# Decompression
# ============================================================================

@dataclass(frozen=True)
class HeaderImage:
    """
    Uncompressed headers rebuilt from a compressed prefix

    Lengths and an elided UDP checksum are left as zero until `finalize`
    sees the whole datagram.
    """
    data: bytes
    consumed: int
    ipv6_offsets: Tuple[int, ...] = ()
    udp_offset: Optional[int] = None
    udp_checksum_elided: bool = False

    @property
    def expansion(self) -> int:
        return len(self.data) - self.consumed


def _record_protocol(record) -> int:
    if isinstance(record, UdpRecord):
        return PROTO_UDP
    if isinstance(record, IphcRecord):
        return _EID_PROTOCOL[EID_IPV6]
    return _EID_PROTOCOL[record.eid]


def _decode_tf(record: IphcRecord) -> Tuple[int, int]:
    if record.tf == 0:
        ecn, dscp, _, flow = _TF_FULL.unpack(record.tf_inline)
    elif record.tf == 1:
        ecn, _, flow = _TF_NO_DSCP.unpack(record.tf_inline)
        dscp = 0
    elif record.tf == 2:
        ecn, dscp = _TF_NO_FLOW.unpack(record.tf_inline)
        flow = 0
    else:
        ecn = dscp = flow = 0
    return dscp << 2 | ecn, flow


def expand_headers(
    data: bytes,
    ctx: ContextTable,
    link_src: Optional[LinkAddress],
    link_dst: Optional[LinkAddress],
    max_depth: Optional[int] = None,
) -> HeaderImage:
    """
    Rebuild the uncompressed header octets of an IPHC-encoded datagram

    Tunnels are expanded in a loop; the encapsulating header's interface
    identifiers stand in for link addresses of inner headers.
    """
    if data[:1] == bytes([DISPATCH_IPV6]):
        return HeaderImage(data=b"", consumed=1)

    chain = parse_chain(data, 0, max_depth)
    records = chain.records
    out = bytearray()
    offsets: List[int] = []
    udp_offset: Optional[int] = None
    udp_elided = False
    src_iid = link_src.iid() if link_src else None
    dst_iid = link_dst.iid() if link_dst else None

    for i, record in enumerate(records):
        following = records[i + 1] if i + 1 < len(records) else None
        if isinstance(record, IphcRecord):
            nh = _record_protocol(following) if record.nh else record.next_header
            src = unicast_address(record.sac, record.sam, record.src_inline, src_iid, ctx.get(record.sci) if record.sac else None)
            if record.m:
                dst = multicast_address(record.dac, record.dam, record.dst_inline, ctx.get(record.dci) if record.dac else None)
            else:
                dst = unicast_address(record.dac, record.dam, record.dst_inline, dst_iid, ctx.get(record.dci) if record.dac else None)
            tc, flow = _decode_tf(record)
            offsets.append(len(out))
            out += _FIXED.pack(6, tc, flow, 0, nh, record.hop_limit) + src + dst
            src_iid, dst_iid = src[8:], dst[8:]
        elif isinstance(record, UdpRecord):
            udp_offset = len(out)
            udp_elided = record.checksum_elided
            out += _UDP.pack(record.src_port, record.dst_port, 0, record.checksum or 0)
        elif record.eid != EID_IPV6:
            nh = _record_protocol(following) if record.next_compressed else record.next_header
            if record.eid == 2:
                out += bytes([nh, 0]) + record.body
            else:
                padded = record.body + padding_for(2 + len(record.body))
                out += bytes([nh, (2 + len(padded)) // 8 - 1]) + padded

    return HeaderImage(
        data=bytes(out),
        consumed=chain.end,
        ipv6_offsets=tuple(offsets),
        udp_offset=udp_offset,
        udp_checksum_elided=udp_elided,
    )


def finalize(image: HeaderImage, datagram: bytes) -> Ipv6Packet:
    """
    Patch lengths and an elided UDP checksum into a complete datagram

    `datagram` must start with `image.data`.
    """
    buf = bytearray(datagram)
    total = len(buf)
    for offset in image.ipv6_offsets:
        buf[offset + 4:offset + 6] = (total - offset - IPV6_HEADER_LEN).to_bytes(2, "big")
    if image.udp_offset is not None:
        u = image.udp_offset
        if total - u < 8:
            raise TruncatedPacket("datagram ends inside the UDP header")
        buf[u + 4:u + 6] = (total - u).to_bytes(2, "big")
        if image.udp_checksum_elided:
            inner = image.ipv6_offsets[-1]
            src = Ipv6Address(value=bytes(buf[inner + 8:inner + 24]))
            dst = Ipv6Address(value=bytes(buf[inner + 24:inner + 40]))
            buf[u + 6:u + 8] = b"\x00\x00"
            value = transport_checksum(src, dst, PROTO_UDP, bytes(buf[u:])) or 0xFFFF
            buf[u + 6:u + 8] = value.to_bytes(2, "big")
    return parse_ipv6(bytes(buf))


def decode_headers(
    data: bytes,
    ctx: ContextTable,
    supported: FeatureSet,
    limits: DecompressionLimits,
    link_src: Optional[LinkAddress] = None,
    link_dst: Optional[LinkAddress] = None,
) -> HeaderImage:
    """Check a compressed datagram prefix against the receiver, then expand it"""
    if not data:
        raise MalformedIphc("empty datagram")
    if dispatch_kind(data[0]) not in (DispatchKind.IPV6, DispatchKind.IPHC):
        raise MalformedIphc(f"datagram dispatch {data[0]:#04x} is neither IPHC nor IPv6")
    check_descriptor(classify(data, link_src=link_src, link_dst=link_dst), supported, limits.max_expansion)
    return expand_headers(data, ctx, link_src, link_dst, limits.max_tunnel_depth)


def decompress(
    data: bytes,
    ctx: ContextTable,
    supported: FeatureSet,
    limits: DecompressionLimits,
    link_src: Optional[LinkAddress] = None,
    link_dst: Optional[LinkAddress] = None,
) -> Ipv6Packet:
    """
    Reconstruct the IPv6 datagram carried by an IPHC or 0x41 frame payload

    Raises:
        UnsupportedFeatureError: lowest-indexed feature outside `supported`,
            or tunnels nested deeper than limits.max_tunnel_depth
        ExpansionExceededError: expansion above limits.max_expansion
        MalformedIphc: truncated or reserved encodings
    """
    image = decode_headers(data, ctx, supported, limits, link_src, link_dst)
    packet = finalize(image, image.data + data[image.consumed:])
    logger.debug("datagram_decompressed", expansion=image.expansion, octets=packet.wire_length)
    return packet


def expansion_of(data: bytes, ctx: ContextTable) -> int:
    """
    Decompressed header octets minus on-air header octets

    Raises:
        MalformedIphc: a stateful address names a context `ctx` lacks
    """
    descriptor = classify(data)
    _, _, rest = parse_mesh_broadcast(data)
    if dispatch_kind(rest[0]) == DispatchKind.FRAG1:
        _, rest = parse_frag_header(rest)
    if dispatch_kind(rest[0]) == DispatchKind.IPHC:
        for record in parse_chain(rest, 0).records:
            if isinstance(record, IphcRecord):
                _require_contexts(record, ctx)
    return descriptor.decompression_expansion


def _require_contexts(record: IphcRecord, ctx: ContextTable) -> None:
    needed = []
    if record.sac and record.sam:
        needed.append(record.sci)
    if record.dac:
        needed.append(record.dci)
    for cid in needed:
        if ctx.get(cid) is None:
            raise MalformedIphc(f"context {cid} is not provisioned")


def source_address_of(
    frame_payload: bytes,
    ctx: ContextTable,
    link_src: Optional[LinkAddress] = None,
) -> Ipv6Address:
    """
    IPv6 source of a frame, recovered without decompressing the rest

    Raises:
        NoSourceAddress: the source is stateful without a provisioned
            context, unspecified, derived from an unknown link address,
            or not present in this frame at all
    """
    try:
        mesh, _, rest = parse_mesh_broadcast(frame_payload)
        if mesh is not None:
            link_src = mesh.originator
        kind = dispatch_kind(rest[0])
        if kind == DispatchKind.FRAGN:
            raise NoSourceAddress("subsequent fragments carry no IPv6 header")
        if kind == DispatchKind.FRAG1:
            _, rest = parse_frag_header(rest)
            kind = dispatch_kind(rest[0])
        if kind == DispatchKind.IPV6:
            if len(rest) < 1 + IPV6_HEADER_LEN:
                raise NoSourceAddress("uncompressed header truncated")
            address = rest[9:25]
        else:
            record, _ = parse_iphc(rest, 0)
            if record.sac and record.sam == 0:
                raise NoSourceAddress("unspecified source")
            context = ctx.get(record.sci) if record.sac else None
            address = unicast_address(
                record.sac, record.sam, record.src_inline,
                link_src.iid() if link_src else None, context,
            )
    except NoSourceAddress:
        raise
    except Exception as e:
        raise NoSourceAddress(str(e)) from e
    if address == bytes(16):
        raise NoSourceAddress("unspecified source")
    return Ipv6Address(value=address)
