"""
Packet templates for simulator traffic

Each template builds one IPv6 datagram from a traffic item and the two
endpoint configurations. Payload octets depend on the repetition index so
every datagram of a repeated item is distinct. `worst_case_frame` builds
the deepest header expansion a single frame can carry.
"""

from __future__ import annotations

from typing import Callable, Dict

from src.core.discovery import ALL_NODES, build_router_advertisement
from src.core.encoding import EID_IPV6, EXT_NHC, IPHC_BASE, UDP_NHC
from src.core.errors import ConfigError
from src.core.wire import serialize_ipv6, with_udp_checksum
from src.models.codec import ContextEntry
from src.models.discovery import SixLowpanContextOption
from src.models.packet import (
    IPV6_HEADER_LEN,
    IPV6_MIN_MTU,
    NO_TRANSPORT,
    ExtensionHeader,
    ExtensionKind,
    Ipv6Address,
    Ipv6Packet,
    Udp,
    UdpHeader,
)
from src.models.simulation import NodeConfig, TrafficItem

DEFAULT_ND_CONTEXT = "2001:db8::/64"

# Smallest legal body of each extension: one PadN option or zeroed fields
_EXTENSION_BODIES: Dict[ExtensionKind, bytes] = {
    ExtensionKind.HOP_BY_HOP: bytes([0x01, 0x04, 0, 0, 0, 0]),
    ExtensionKind.DESTINATION_OPTIONS: bytes([0x01, 0x04, 0, 0, 0, 0]),
    ExtensionKind.ROUTING: bytes(6),
    ExtensionKind.FRAGMENT: bytes([0, 0, 0, 0, 0, 1]),
    # Binding Refresh Request
    ExtensionKind.MOBILITY: bytes(6),
}


def payload_for(size: int, index: int) -> bytes:
    return bytes((index + i) & 0xFF for i in range(size))


def _addresses(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig):
    if item.global_prefix is not None:
        prefix = ContextEntry.parse(item.global_prefix).prefix[:8]
        src = Ipv6Address(value=prefix + sender.link_addr.iid())
        dst = Ipv6Address(value=prefix + receiver.link_addr.iid())
    else:
        src, dst = sender.address, receiver.address
    if item.dst_address is not None:
        dst = Ipv6Address.parse(item.dst_address)
    return src, dst


def extension(name: str) -> ExtensionHeader:
    try:
        kind = ExtensionKind(name)
    except ValueError:
        raise ConfigError(f"unknown extension header {name!r}") from None
    if kind not in _EXTENSION_BODIES:
        raise ConfigError(f"{name} cannot be used as a template extension")
    return ExtensionHeader(kind=kind, body=_EXTENSION_BODIES[kind])


def _udp(item: TrafficItem, index: int) -> Udp:
    payload = payload_for(item.payload_size, index)
    header = UdpHeader(src_port=item.src_port, dst_port=item.dst_port, length=8 + len(payload))
    return Udp(header=header, payload=payload)


def udp_template(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig, index: int) -> Ipv6Packet:
    src, dst = _addresses(item, sender, receiver)
    packet = Ipv6Packet.build(
        src, dst, _udp(item, index),
        [extension(name) for name in item.extensions],
        hop_limit=item.hop_limit,
    )
    return with_udp_checksum(packet)


def mobility_template(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig, index: int) -> Ipv6Packet:
    src, dst = _addresses(item, sender, receiver)
    exts = [extension(name) for name in item.extensions] + [extension(ExtensionKind.MOBILITY.value)]
    return Ipv6Packet.build(src, dst, NO_TRANSPORT, exts, hop_limit=item.hop_limit)


def tunneled_template(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig, index: int) -> Ipv6Packet:
    src, dst = _addresses(item, sender, receiver)
    inner = with_udp_checksum(Ipv6Packet.build(src, dst, _udp(item, index), hop_limit=item.hop_limit))
    tunnel = ExtensionHeader(kind=ExtensionKind.TUNNELED_IPV6, body=serialize_ipv6(inner))
    return Ipv6Packet.build(src, dst, NO_TRANSPORT, [tunnel], hop_limit=item.hop_limit)


def nd_context_template(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig, index: int) -> Ipv6Packet:
    """Router Advertisement carrying the sender's context 0 in a 6LoWPAN Context Option"""
    entry = sender.contexts.get(0) or ContextEntry.parse(DEFAULT_ND_CONTEXT)
    option = SixLowpanContextOption.from_entry(0, entry)
    dst = Ipv6Address.parse(item.dst_address) if item.dst_address else ALL_NODES
    return build_router_advertisement(sender.address, contexts=[option], dst=dst)


TEMPLATES: Dict[str, Callable[[TrafficItem, NodeConfig, NodeConfig, int], Ipv6Packet]] = {
    "udp": udp_template,
    "mobility": mobility_template,
    "tunneled": tunneled_template,
    "nd_context": nd_context_template,
}


def build_packet(item: TrafficItem, sender: NodeConfig, receiver: NodeConfig, index: int = 0) -> Ipv6Packet:
    try:
        template = TEMPLATES[item.template]
    except KeyError:
        raise ConfigError(f"unknown packet template {item.template!r}") from None
    return template(item, sender, receiver, index)


# Fully elided IPv6 header (link-derived addresses, hop limit 255) with a compressed next header
_ELIDED_IPHC = IPHC_BASE.pack(0b011, 3, 1, 3, 0, 0, 3, 0, 0, 3)
_TUNNEL_NHC = EXT_NHC.pack(0b1110, EID_IPV6, 0)
# Ports 0xF0B0/0xF0B0 in one nibble each, checksum elided
_SHORT_UDP_NHC = UDP_NHC.pack(0b11110, 1, 3) + b"\x00"


def worst_case_frame(mtu_payload: int) -> bytes:
    """
    Frame payload whose headers expand as far as a 1280-octet datagram allows

    Nests fully elided IPv6 headers through tunneled-IPv6 NHC down to a UDP
    NHC, then fills the frame with payload.
    """
    tunnel, last = _ELIDED_IPHC + _TUNNEL_NHC, _ELIDED_IPHC + _SHORT_UDP_NHC
    layers = (IPV6_MIN_MTU - 8) // IPV6_HEADER_LEN
    while layers > 1 and len(tunnel) * (layers - 1) + len(last) > mtu_payload:
        layers -= 1
    headers = tunnel * (layers - 1) + last
    room = min(mtu_payload - len(headers), IPV6_MIN_MTU - layers * IPV6_HEADER_LEN - 8)
    if room < 0:
        raise ConfigError(f"a {mtu_payload}-octet frame payload cannot hold one compressed header")
    return headers + payload_for(room, 0)
