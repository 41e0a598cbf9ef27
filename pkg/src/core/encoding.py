"""
Structural parser for LOWPAN_IPHC and LOWPAN_NHC encodings

Splits a compressed header chain into records without needing contexts,
so the same walk serves classification, expansion accounting and
decompression. Tunneled IPv6 is handled with a loop and a depth counter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import bitstruct

from src.core.errors import MalformedIphc, UnsupportedFeatureError
from src.models.capability import Feature

# 011 | TF | NH | HLIM | CID | SAC | SAM | M | DAC | DAM
IPHC_BASE = bitstruct.compile("u3u2u1u2u1u1u2u1u1u2")
# 11110 | C | P
UDP_NHC = bitstruct.compile("u5u1u2")
# 1110 | EID | NH
EXT_NHC = bitstruct.compile("u4u3u1")

EID_HOP_BY_HOP = 0
EID_ROUTING = 1
EID_FRAGMENT = 2
EID_DESTINATION_OPTIONS = 3
EID_MOBILITY = 4
EID_IPV6 = 7

HLIM_VALUES = {1: 1, 2: 64, 3: 255}
TF_INLINE_LEN = {0: 4, 1: 3, 2: 1, 3: 0}
UNICAST_INLINE_LEN = {0: 16, 1: 8, 2: 2, 3: 0}
MULTICAST_INLINE_LEN = {0: 16, 1: 6, 2: 4, 3: 1}
STATEFUL_MULTICAST_INLINE_LEN = 6


@dataclass(frozen=True)
class IphcRecord:
    """One LOWPAN_IPHC header; `depth` is 0 for the outermost"""
    tf: int
    nh: int
    hlim: int
    cid: int
    sac: int
    sam: int
    m: int
    dac: int
    dam: int
    sci: int
    dci: int
    tf_inline: bytes
    next_header: Optional[int]
    hop_limit: Optional[int]
    src_inline: bytes
    dst_inline: bytes
    depth: int
    length: int

    @property
    def uncompressed_length(self) -> int:
        return 40


@dataclass(frozen=True)
class UdpRecord:
    checksum_elided: bool
    ports: int
    src_port: int
    dst_port: int
    checksum: Optional[int]
    length: int

    @property
    def uncompressed_length(self) -> int:
        return 8


@dataclass(frozen=True)
class ExtRecord:
    """Compressed extension header; `body` is what followed the length octet"""
    eid: int
    next_compressed: bool
    next_header: Optional[int]
    body: bytes
    length: int

    @property
    def padding_needed(self) -> int:
        if self.eid == EID_IPV6:
            return 0
        return -(2 + len(self.body)) % 8

    @property
    def uncompressed_length(self) -> int:
        if self.eid == EID_IPV6:
            return 0
        return 2 + len(self.body) + self.padding_needed


Record = Union[IphcRecord, UdpRecord, ExtRecord]


@dataclass(frozen=True)
class CompressedChain:
    """
    Records of one compressed header chain

    `end` is the offset of the first octet carried verbatim; `tail_next_header`
    is the inline next header that octet starts with (None after UDP NHC).
    """
    records: Tuple[Record, ...]
    start: int
    end: int
    tail_next_header: Optional[int]
    depth: int

    @property
    def on_air_length(self) -> int:
        return self.end - self.start

    @property
    def uncompressed_length(self) -> int:
        return sum(r.uncompressed_length for r in self.records)

    @property
    def expansion(self) -> int:
        return self.uncompressed_length - self.on_air_length


def _take(data: bytes, pos: int, count: int, what: str) -> bytes:
    if pos + count > len(data):
        raise MalformedIphc(f"{what} truncated")
    return data[pos:pos + count]


def _address_inline_len(stateful: int, mode: int, multicast: int) -> int:
    if multicast:
        if stateful:
            if mode != 0:
                raise MalformedIphc("reserved stateful multicast mode")
            return STATEFUL_MULTICAST_INLINE_LEN
        return MULTICAST_INLINE_LEN[mode]
    if stateful and mode == 0:
        return 0
    return UNICAST_INLINE_LEN[mode]


def parse_iphc(data: bytes, pos: int, depth: int = 0) -> Tuple[IphcRecord, int]:
    """Parse one IPHC header starting at `pos`"""
    start = pos
    base = _take(data, pos, 2, "IPHC base")
    prefix, tf, nh, hlim, cid, sac, sam, m, dac, dam = IPHC_BASE.unpack(base)
    if prefix != 0b011:
        raise MalformedIphc(f"not an IPHC dispatch: {data[pos]:#04x}")
    pos += 2
    sci = dci = 0
    if cid:
        ctx = _take(data, pos, 1, "context identifier extension")[0]
        sci, dci = ctx >> 4, ctx & 0x0F
        pos += 1
    if not m and dac and dam == 0:
        raise MalformedIphc("reserved stateful unicast destination mode")

    tf_inline = _take(data, pos, TF_INLINE_LEN[tf], "traffic class/flow label")
    pos += len(tf_inline)
    next_header = None
    if not nh:
        next_header = _take(data, pos, 1, "next header")[0]
        pos += 1
    hop_limit = HLIM_VALUES.get(hlim)
    if hlim == 0:
        hop_limit = _take(data, pos, 1, "hop limit")[0]
        pos += 1
    src_inline = _take(data, pos, _address_inline_len(sac, sam, 0), "source address")
    pos += len(src_inline)
    dst_inline = _take(data, pos, _address_inline_len(dac, dam, m), "destination address")
    pos += len(dst_inline)

    record = IphcRecord(
        tf=tf, nh=nh, hlim=hlim, cid=cid, sac=sac, sam=sam, m=m, dac=dac, dam=dam,
        sci=sci, dci=dci, tf_inline=tf_inline, next_header=next_header, hop_limit=hop_limit,
        src_inline=src_inline, dst_inline=dst_inline, depth=depth, length=pos - start,
    )
    return record, pos


def _parse_udp(data: bytes, pos: int) -> Tuple[UdpRecord, int]:
    start = pos
    _, c, p = UDP_NHC.unpack(_take(data, pos, 1, "UDP NHC"))
    pos += 1
    if p == 0:
        raw = _take(data, pos, 4, "UDP ports")
        sport, dport = int.from_bytes(raw[:2], "big"), int.from_bytes(raw[2:], "big")
    elif p == 1:
        raw = _take(data, pos, 3, "UDP ports")
        sport, dport = int.from_bytes(raw[:2], "big"), 0xF000 | raw[2]
    elif p == 2:
        raw = _take(data, pos, 3, "UDP ports")
        sport, dport = 0xF000 | raw[0], int.from_bytes(raw[1:], "big")
    else:
        raw = _take(data, pos, 1, "UDP ports")
        sport, dport = 0xF0B0 | raw[0] >> 4, 0xF0B0 | raw[0] & 0x0F
    pos += len(raw)
    checksum = None
    if not c:
        checksum = int.from_bytes(_take(data, pos, 2, "UDP checksum"), "big")
        pos += 2
    return UdpRecord(bool(c), p, sport, dport, checksum, pos - start), pos


def _parse_ext(data: bytes, pos: int, eid: int, nh_bit: int) -> Tuple[ExtRecord, int]:
    start = pos
    pos += 1
    next_header = None
    if not nh_bit:
        next_header = _take(data, pos, 1, "extension next header")[0]
        pos += 1
    size = _take(data, pos, 1, "extension length")[0]
    pos += 1
    body = _take(data, pos, size, "extension body")
    pos += size
    record = ExtRecord(eid, bool(nh_bit), next_header, body, pos - start)
    if eid == EID_FRAGMENT and size != 6:
        raise MalformedIphc("compressed fragment header must carry 6 octets")
    if eid in (EID_ROUTING, EID_MOBILITY) and record.padding_needed:
        raise MalformedIphc("routing/mobility header length is not a multiple of 8")
    return record, pos


def parse_chain(data: bytes, pos: int = 0, max_depth: Optional[int] = None) -> CompressedChain:
    """
    Walk an IPHC header and every NHC header that follows it

    Args:
        data: octets starting at (or containing) the IPHC dispatch
        pos: offset of the IPHC dispatch
        max_depth: tunneled IPv6 nesting allowed; None for unbounded

    Raises:
        MalformedIphc: truncated or reserved encodings
        UnsupportedFeatureError: tunnel nesting deeper than `max_depth`
    """
    start = pos
    records: List[Record] = []
    depth = 0
    iphc, pos = parse_iphc(data, pos, depth)
    records.append(iphc)
    compressed_next = bool(iphc.nh)
    tail_nh = iphc.next_header

    while compressed_next:
        octet = _take(data, pos, 1, "NHC")[0]
        if octet & 0xF8 == 0xF0:
            udp, pos = _parse_udp(data, pos)
            records.append(udp)
            compressed_next = False
            tail_nh = None
        elif octet & 0xF0 == 0xE0:
            _, eid, nh_bit = EXT_NHC.unpack(bytes([octet]))
            if eid == EID_IPV6:
                depth += 1
                if max_depth is not None and depth > max_depth:
                    raise UnsupportedFeatureError(
                        Feature.TUNNELED_IPV6, f"tunnel depth {depth} exceeds {max_depth}"
                    )
                records.append(ExtRecord(eid, True, None, b"", 1))
                inner, pos = parse_iphc(data, pos + 1, depth)
                records.append(inner)
                compressed_next = bool(inner.nh)
                tail_nh = inner.next_header
            elif eid <= EID_MOBILITY:
                ext, pos = _parse_ext(data, pos, eid, nh_bit)
                records.append(ext)
                compressed_next = ext.next_compressed
                tail_nh = ext.next_header
            else:
                raise MalformedIphc(f"reserved extension EID {eid}")
        else:
            raise MalformedIphc(f"unknown NHC octet {octet:#04x}")

    return CompressedChain(tuple(records), start, pos, tail_nh, depth)


# ============================================================================
# Feature mapping
# ============================================================================

def _iphc_features(r: IphcRecord, short_src: bool, short_dst: bool) -> List[Feature]:
    found = [Feature.IPHC_DISPATCH, Feature.IPV6_LENGTH_VERSION_ELISION]
    if r.tf in (1, 3):
        found.append(Feature.TRAFFIC_CLASS)
    if r.tf in (2, 3):
        found.append(Feature.FLOW_LABEL)
    if r.hlim:
        found.append(Feature.HOP_LIMIT)

    if r.sac:
        found.append(Feature.STATEFUL_UNICAST if r.sam else Feature.STATELESS_SRC_DECOMPRESSION)
    elif r.sam:
        found.append(Feature.STATELESS_SRC_DECOMPRESSION)
    if r.sam == 3 and short_src:
        found.append(Feature.SHORT_LINK_ADDRESS)

    if r.m:
        if r.dac:
            found.append(Feature.STATEFUL_MULTICAST)
        elif r.dam:
            found.append(Feature.STATELESS_MULTICAST)
        return found
    if r.dac:
        found.append(Feature.STATEFUL_UNICAST)
    elif r.dam:
        found.append(Feature.STATELESS_DST_COMPRESSION)
    if r.dam == 3:
        found.append(Feature.ADDRESS_AUTOCONFIGURATION)
        if short_dst:
            found.append(Feature.SHORT_LINK_ADDRESS)
    return found


def record_features(record: Record, short_src: bool = False, short_dst: bool = False) -> List[Feature]:
    """
    Features one record exercises

    `short_src`/`short_dst` say whether the link addresses an outermost
    IPHC header derives from are 16-bit short addresses.
    """
    if isinstance(record, IphcRecord):
        outer = record.depth == 0
        return _iphc_features(record, short_src and outer, short_dst and outer)
    if isinstance(record, UdpRecord):
        found = [Feature.UDP_NHC, Feature.UDP_LENGTH_ELISION]
        if record.ports:
            found.append(Feature.UDP_PORTS)
        if record.checksum_elided:
            found.append(Feature.UDP_CHECKSUM_ELISION)
        return found
    if record.eid == EID_IPV6:
        return [Feature.TUNNELED_IPV6]
    if record.eid == EID_MOBILITY:
        return [Feature.MOBILITY_HEADER]
    if record.eid in (EID_HOP_BY_HOP, EID_DESTINATION_OPTIONS) and record.padding_needed:
        return [Feature.EXTENSION_HEADERS, Feature.EXTENSION_PADDING_ELISION]
    return [Feature.EXTENSION_HEADERS]


def chain_features(chain: CompressedChain, short_src: bool = False, short_dst: bool = False) -> List[Feature]:
    found: List[Feature] = []
    for record in chain.records:
        found.extend(record_features(record, short_src, short_dst))
    return found
