"""
RFC 4944 fragmentation and reassembly

Only the first fragment carries compressed headers; every later fragment
is a slice of the uncompressed datagram at an 8-octet aligned offset.
Reassembly decompresses the first fragment as soon as it arrives and
tracks coverage in 8-octet units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.errors import InvariantViolation, LowpanError, MalformedHeader, TooLarge
from src.core.headers import (
    encode_broadcast_header,
    encode_frag_header,
    encode_mesh_header,
    parse_frag_header,
    parse_mesh_broadcast,
)
from src.core.iphc import HeaderImage, decode_headers, finalize
from src.models.capability import Feature, FeatureSet
from src.models.codec import CompressedDatagram, ContextTable, DecompressionLimits, FragHeader, FragKind
from src.models.packet import Ipv6Packet, LinkAddress
from src.utils.config import get_config
from src.utils.logger import get_logger

logger = get_logger(__name__)

__all__ = [
    "FeedResult",
    "FeedStatus",
    "ReassemblyBuffer",
    "ReassemblyPool",
    "encode_broadcast_header",
    "encode_mesh_header",
    "fragment",
    "parse_mesh_broadcast",
    "reassemble_feed",
]

FRAG1_HEADER_LEN = 4
FRAGN_HEADER_LEN = 5
MAX_DATAGRAM_SIZE = 0x7FF
MIN_MTU_PAYLOAD = 16


def fragment(
    compressed: CompressedDatagram,
    uncompressed_size: int,
    mtu_payload: int,
    tag: int,
) -> List[bytes]:
    """
    Split a compressed datagram into frame payloads

    Args:
        compressed: output of compression
        uncompressed_size: size FRAG1 advertises (the decompressed datagram)
        mtu_payload: octets available per frame
        tag: datagram tag shared by all fragments

    Returns:
        one payload with no fragment header when the datagram fits,
        otherwise FRAG1 followed by FRAGN payloads

    Raises:
        TooLarge: uncompressed_size does not fit the 11-bit size field, or
            the compressed headers do not fit a first fragment
    """
    if mtu_payload < MIN_MTU_PAYLOAD:
        raise InvariantViolation(f"mtu_payload {mtu_payload} below {MIN_MTU_PAYLOAD}")
    if uncompressed_size != compressed.uncompressed_size:
        raise InvariantViolation(
            f"uncompressed_size {uncompressed_size} but datagram expands to {compressed.uncompressed_size}"
        )
    data = compressed.data
    if len(data) <= mtu_payload:
        return [data]
    if uncompressed_size > MAX_DATAGRAM_SIZE:
        raise TooLarge(f"datagram_size {uncompressed_size} exceeds {MAX_DATAGRAM_SIZE}")

    c, h = compressed.compressed_header_len, compressed.uncompressed_header_len
    raw = data[c:]
    first_raw = ((mtu_payload - FRAG1_HEADER_LEN - c + h) // 8) * 8 - h
    if first_raw < 0:
        raise TooLarge(f"{c} octets of compressed headers do not fit a {mtu_payload}-octet first fragment")

    first = FragHeader(kind=FragKind.FIRST, datagram_size=uncompressed_size, datagram_tag=tag)
    payloads = [encode_frag_header(first) + data[:c] + raw[:first_raw]]
    chunk = ((mtu_payload - FRAGN_HEADER_LEN) // 8) * 8
    offset = h + first_raw
    while offset < uncompressed_size:
        header = FragHeader(
            kind=FragKind.SUBSEQUENT,
            datagram_size=uncompressed_size,
            datagram_tag=tag,
            datagram_offset=offset // 8,
        )
        payloads.append(encode_frag_header(header) + raw[offset - h:offset - h + chunk])
        offset += chunk

    logger.debug("datagram_fragmented", tag=tag, size=uncompressed_size, fragments=len(payloads))
    return payloads


# ============================================================================
# Reassembly
# ============================================================================

class FeedStatus(str, Enum):
    INCOMPLETE = "Incomplete"
    COMPLETE = "Complete"
    ERROR = "Error"
    DISCARDED = "Discarded"


@dataclass(frozen=True)
class FeedResult:
    status: FeedStatus
    packet: Optional[Ipv6Packet] = None
    reason: Optional[str] = None
    missing: Optional[Feature] = None

    @classmethod
    def error(cls, reason: str, missing: Optional[Feature] = None) -> "FeedResult":
        return cls(FeedStatus.ERROR, reason=reason, missing=missing)


INCOMPLETE = FeedResult(FeedStatus.INCOMPLETE)
DISCARDED = FeedResult(FeedStatus.DISCARDED)


@dataclass
class ReassemblyBuffer:
    """
    One datagram being reassembled

    The first fragment is decompressed into a staging area of one frame
    payload plus max_expansion octets before it joins the datagram buffer.
    """
    tag: int
    size: int
    deadline: int
    link_src: Optional[LinkAddress]
    link_dst: Optional[LinkAddress]
    contexts: ContextTable
    supported: FeatureSet
    limits: DecompressionLimits
    mtu_payload: int = field(default_factory=lambda: get_config().lowpan.link.mtu_payload)
    image: Optional[HeaderImage] = None
    failed: Optional[str] = None
    data: bytearray = field(init=False)
    received: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.data = bytearray(self.size)
        self.received = np.zeros(-(-self.size // 8), dtype=bool)

    @property
    def staging_capacity(self) -> int:
        return self.mtu_payload + self.limits.max_expansion

    @property
    def complete(self) -> bool:
        return bool(self.received.all())

    def fail(self, reason: str, missing: Optional[Feature] = None) -> FeedResult:
        self.failed = reason
        logger.info("reassembly_failed", tag=self.tag, reason=reason)
        return FeedResult.error(reason, missing)


def _conflicts(buf: ReassemblyBuffer, start: int, chunk: bytes) -> bool:
    end = start + len(chunk)
    lo, hi = start // 8, -(-end // 8)
    for unit in np.flatnonzero(buf.received[lo:hi]) + lo:
        a, b = max(int(unit) * 8, start), min(int(unit) * 8 + 8, end)
        if buf.data[a:b] != chunk[a - start:b - start]:
            return True
    return False


def reassemble_feed(buf: ReassemblyBuffer, frame_payload: bytes, now: int) -> FeedResult:
    """
    Add one fragment to `buf`

    Returns Complete with the datagram once every 8-octet unit is covered.
    Identical duplicates are accepted and change nothing; once the buffer
    has failed every further fragment is Discarded.
    """
    if buf.failed is not None:
        return DISCARDED
    if now > buf.deadline:
        return buf.fail("Timeout")

    header, body = parse_frag_header(frame_payload)
    if header.datagram_tag != buf.tag or header.datagram_size != buf.size:
        raise InvariantViolation(f"fragment tag {header.datagram_tag} fed to buffer {buf.tag}")

    image: Optional[HeaderImage] = None
    if header.kind == FragKind.FIRST:
        try:
            image = decode_headers(body, buf.contexts, buf.supported, buf.limits, buf.link_src, buf.link_dst)
        except LowpanError as e:
            return buf.fail(e.reason, getattr(e, "feature", None))
        chunk = image.data + body[image.consumed:]
        if len(chunk) > buf.staging_capacity:
            return buf.fail("ExpansionExceeded")
        start = 0
    else:
        if header.datagram_offset == 0:
            return buf.fail(MalformedHeader.reason)
        chunk, start = body, header.datagram_offset * 8

    end = start + len(chunk)
    if end > buf.size or (end % 8 and end != buf.size):
        return buf.fail(MalformedHeader.reason)
    if _conflicts(buf, start, chunk):
        return buf.fail("Conflict")

    buf.data[start:end] = chunk
    buf.received[start // 8:-(-end // 8)] = True
    if image is not None:
        buf.image = image
    if not buf.complete:
        return INCOMPLETE

    try:
        packet = finalize(buf.image, bytes(buf.data))
    except LowpanError as e:
        return buf.fail(e.reason)
    logger.debug("datagram_reassembled", tag=buf.tag, size=buf.size)
    return FeedResult(FeedStatus.COMPLETE, packet=packet)


_Key = Tuple[Optional[LinkAddress], int, int]


class ReassemblyPool:
    """
    Fixed number of reassembly buffers owned by one node

    A datagram arriving while every buffer is busy is dropped and counted;
    buffers past their deadline are purged and counted. Fragments of a
    datagram that already failed or completed are discarded until its deadline
    passes.
    """

    def __init__(
        self,
        contexts: ContextTable,
        supported: FeatureSet,
        limits: DecompressionLimits,
        capacity: Optional[int] = None,
        timeout: Optional[int] = None,
        mtu_payload: Optional[int] = None,
    ):
        config = get_config().lowpan
        self.contexts = contexts
        self.supported = supported
        self.limits = limits
        self.capacity = capacity if capacity is not None else config.reassembly.buffer_count
        self.timeout = timeout if timeout is not None else config.reassembly.timeout_ticks
        self.mtu_payload = mtu_payload if mtu_payload is not None else config.link.mtu_payload
        self.buffers: Dict[_Key, ReassemblyBuffer] = {}
        self._failed: Dict[_Key, int] = {}
        self._completed: Dict[_Key, int] = {}
        self.stats = {"completed": 0, "overflow": 0, "expired": 0, "failed": 0}

    def _purge(self, now: int) -> None:
        for key in [k for k, b in self.buffers.items() if now > b.deadline]:
            del self.buffers[key]
            self.stats["expired"] += 1
        for key in [k for k, until in self._failed.items() if now > until]:
            del self._failed[key]
        for key in [k for k, until in self._completed.items() if now > until]:
            del self._completed[key]

    def feed(
        self,
        frame_payload: bytes,
        link_src: Optional[LinkAddress],
        link_dst: Optional[LinkAddress],
        now: int,
    ) -> FeedResult:
        try:
            header, _ = parse_frag_header(frame_payload)
        except LowpanError as e:
            return FeedResult.error(e.reason)
        key: _Key = (link_src, header.datagram_tag, header.datagram_size)

        buf = self.buffers.get(key)
        if buf is not None and now > buf.deadline:
            result = reassemble_feed(buf, frame_payload, now)
            self._retire(key, buf, result, now)
            return result
        self._purge(now)
        if key in self._failed or key in self._completed:
            return DISCARDED

        if buf is None:
            if len(self.buffers) >= self.capacity:
                self.stats["overflow"] += 1
                logger.info("reassembly_pool_full", tag=header.datagram_tag, capacity=self.capacity)
                return FeedResult.error("ReassemblyPoolFull")
            buf = ReassemblyBuffer(
                tag=header.datagram_tag,
                size=header.datagram_size,
                deadline=now + self.timeout,
                link_src=link_src,
                link_dst=link_dst,
                contexts=self.contexts,
                supported=self.supported,
                limits=self.limits,
                mtu_payload=self.mtu_payload,
            )
            self.buffers[key] = buf

        result = reassemble_feed(buf, frame_payload, now)
        self._retire(key, buf, result, now)
        return result

    def _retire(self, key: _Key, buf: ReassemblyBuffer, result: FeedResult, now: int) -> None:
        if result.status == FeedStatus.COMPLETE:
            del self.buffers[key]
            self.stats["completed"] += 1
            self._completed[key] = now + self.timeout
        elif result.status == FeedStatus.ERROR:
            self.buffers.pop(key, None)
            self._failed[key] = now + self.timeout
            self.stats["failed"] += 1

    def __len__(self) -> int:
        return len(self.buffers)
