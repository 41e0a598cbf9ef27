"""
Golden test vectors: reference datagrams compressed at every capability level

Each vector file holds one datagram and its encoding at one level, between
`[uncompressed]` and `[compressed]` section markers, with `#` metadata lines.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

from src.core.capability import features_of_level
from src.core.discovery import ALL_NODES
from src.core.errors import ConfigError
from src.core.iphc import compress, decompress
from src.core.wire import parse_ipv6, serialize_ipv6, with_udp_checksum
from src.models.codec import ContextTable, DecompressionLimits
from src.models.packet import (
    ExtensionHeader,
    ExtensionKind,
    Icmpv6,
    Ipv6Address,
    Ipv6Packet,
    LinkAddress,
    Udp,
    UdpHeader,
)
from src.utils.validators import format_hex, parse_hex

VECTOR_VERSION = 1
VECTOR_LINK_SRC = LinkAddress.parse("02:00:00:00:00:00:00:01")
VECTOR_LINK_DST = LinkAddress.parse("02:00:00:00:00:00:00:02")
VECTOR_CONTEXTS = ContextTable.from_prefixes({0: "2001:db8::/64"})
VECTOR_LIMITS = DecompressionLimits(max_expansion=50, max_tunnel_depth=1)


@dataclass(frozen=True)
class GoldenVector:
    name: str
    level: int
    uncompressed: bytes
    compressed: bytes

    @property
    def filename(self) -> str:
        return f"{self.name}_l{self.level}.hex"


def _udp(src: Ipv6Address, dst: Ipv6Address, sport: int = 5683, dport: int = 5683, hop_limit: int = 64, exts=()):
    payload = bytes(range(10))
    udp = Udp(header=UdpHeader(src_port=sport, dst_port=dport, length=8 + len(payload)), payload=payload)
    return with_udp_checksum(Ipv6Packet.build(src, dst, udp, list(exts), hop_limit=hop_limit))


def _link_local() -> Ipv6Packet:
    return _udp(VECTOR_LINK_SRC.link_local_address(), VECTOR_LINK_DST.link_local_address())


def _global_context() -> Ipv6Packet:
    prefix = VECTOR_CONTEXTS.get(0).prefix[:8]
    src = Ipv6Address(value=prefix + VECTOR_LINK_SRC.iid())
    dst = Ipv6Address(value=prefix + VECTOR_LINK_DST.iid())
    return _udp(src, dst, 0xF0B1, 0xF0B2, hop_limit=64)


def _multicast() -> Ipv6Packet:
    return _udp(VECTOR_LINK_SRC.link_local_address(), ALL_NODES, hop_limit=255)


def _hop_by_hop() -> Ipv6Packet:
    ext = ExtensionHeader(kind=ExtensionKind.HOP_BY_HOP, body=bytes([0x01, 0x04, 0, 0, 0, 0]))
    return _udp(VECTOR_LINK_SRC.link_local_address(), VECTOR_LINK_DST.link_local_address(), exts=[ext])


def _echo_request() -> Ipv6Packet:
    echo = Icmpv6(data=bytes([128, 0, 0, 0, 0x12, 0x34, 0, 1]) + b"ping")
    return Ipv6Packet.build(
        VECTOR_LINK_SRC.link_local_address(), VECTOR_LINK_DST.link_local_address(), echo, hop_limit=64
    )


VECTOR_PACKETS: Dict[str, Callable[[], Ipv6Packet]] = {
    "udp_link_local": _link_local,
    "udp_global_context": _global_context,
    "udp_all_nodes": _multicast,
    "udp_hop_by_hop": _hop_by_hop,
    "icmp_echo": _echo_request,
}


def golden_vectors() -> List[GoldenVector]:
    vectors = []
    for name, build in VECTOR_PACKETS.items():
        packet = build()
        for level in range(6):
            compressed = compress(
                packet, VECTOR_CONTEXTS, features_of_level(level), VECTOR_LIMITS,
                link_src=VECTOR_LINK_SRC, link_dst=VECTOR_LINK_DST,
            )
            vectors.append(GoldenVector(name, level, serialize_ipv6(packet), compressed.data))
    return vectors


def format_vector(vector: GoldenVector) -> str:
    lines = [
        f"# p6lowpan vector v{VECTOR_VERSION}",
        f"# packet: {vector.name}",
        f"# level: {vector.level}",
        f"# link-src: {VECTOR_LINK_SRC}",
        f"# link-dst: {VECTOR_LINK_DST}",
        "# contexts: 0 2001:db8::/64",
        "[uncompressed]",
        format_hex(vector.uncompressed),
        "[compressed]",
        format_hex(vector.compressed),
    ]
    return "\n".join(lines) + "\n"


def parse_vector(text: str, name: Optional[str] = None) -> GoldenVector:
    """
    Raises:
        ConfigError: a section or the level line is missing
    """
    meta: Dict[str, str] = {}
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            key, _, value = stripped[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1]
            sections[current] = []
        elif stripped and current is not None:
            sections[current].append(stripped)
    for required in ("uncompressed", "compressed"):
        if required not in sections:
            raise ConfigError(f"vector is missing its [{required}] section")
    if "level" not in meta:
        raise ConfigError("vector is missing its level line")
    return GoldenVector(
        name=meta.get("packet", name or "vector"),
        level=int(meta["level"]),
        uncompressed=parse_hex("\n".join(sections["uncompressed"])),
        compressed=parse_hex("\n".join(sections["compressed"])),
    )


def read_vectors(directory: Path) -> List[GoldenVector]:
    return [parse_vector(p.read_text(encoding="utf-8"), p.stem) for p in sorted(Path(directory).glob("*.hex"))]


def write_vectors(directory: Path) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for vector in golden_vectors():
        path = directory / vector.filename
        path.write_text(format_vector(vector), encoding="utf-8")
        written.append(path)
    return written


def verify_vector(vector: GoldenVector) -> List[str]:
    """Differences between a stored vector and the codec's current behaviour"""
    problems = []
    supported = features_of_level(vector.level)
    packet = parse_ipv6(vector.uncompressed)
    fresh = compress(
        packet, VECTOR_CONTEXTS, supported, VECTOR_LIMITS,
        link_src=VECTOR_LINK_SRC, link_dst=VECTOR_LINK_DST,
    )
    if fresh.data != vector.compressed:
        problems.append(f"{vector.name} level {vector.level}: compression changed")
    restored = decompress(vector.compressed, VECTOR_CONTEXTS, supported, VECTOR_LIMITS, VECTOR_LINK_SRC, VECTOR_LINK_DST)
    if serialize_ipv6(restored) != vector.uncompressed:
        problems.append(f"{vector.name} level {vector.level}: decompression does not restore the datagram")
    return problems
