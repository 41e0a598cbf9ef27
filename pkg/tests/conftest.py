"""
Pytest configuration and shared fixtures for the P6LoWPAN test suite.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.models.codec import ContextTable, DecompressionLimits  # noqa: E402
from src.models.packet import LinkAddress  # noqa: E402

VECTOR_DIR = Path(__file__).resolve().parent / "vectors"


@pytest.fixture(autouse=True)
def default_config(tmp_path_factory, monkeypatch):
    """Every test sees the built-in defaults, whatever config.yaml or the environment say"""
    from src.utils.config import reload_config

    for name in ("P6LOWPAN_LOG_LEVEL", "P6LOWPAN_SEED", "P6LOWPAN_MAX_EXPANSION"):
        monkeypatch.delenv(name, raising=False)
    missing = tmp_path_factory.getbasetemp() / "no-config.yaml"
    monkeypatch.setenv("P6LOWPAN_CONFIG_PATH", str(missing))
    config = reload_config(str(missing))
    yield config
    reload_config(str(missing))


@pytest.fixture
def link_a():
    return LinkAddress.parse("02:00:00:00:00:00:00:01")


@pytest.fixture
def link_b():
    return LinkAddress.parse("02:00:00:00:00:00:00:02")


@pytest.fixture
def contexts():
    """Context 0 covering the documentation prefix"""
    return ContextTable.from_prefixes({0: "2001:db8::/64"})


@pytest.fixture
def limits():
    return DecompressionLimits(max_expansion=50, max_tunnel_depth=1)


@pytest.fixture
def udp_packet(link_a, link_b):
    """Link-local UDP datagram with addresses derived from the link addresses"""
    from src.core.wire import with_udp_checksum
    from src.models.packet import Ipv6Packet, Udp, UdpHeader

    payload = bytes(range(10))
    udp = Udp(header=UdpHeader(src_port=5683, dst_port=5683, length=18), payload=payload)
    return with_udp_checksum(
        Ipv6Packet.build(link_a.link_local_address(), link_b.link_local_address(), udp, hop_limit=64)
    )


@pytest.fixture
def make_udp(link_a, link_b):
    """Factory for UDP datagrams with overridable header fields"""
    from src.core.wire import with_udp_checksum
    from src.models.packet import Ipv6Address, Ipv6Packet, Udp, UdpHeader

    def build(
        src=None,
        dst=None,
        *,
        payload=b"hello",
        sport=5683,
        dport=5683,
        hop_limit=64,
        traffic_class=0,
        flow_label=0,
        extensions=(),
    ):
        src = Ipv6Address.parse(src) if isinstance(src, str) else (src or link_a.link_local_address())
        dst = Ipv6Address.parse(dst) if isinstance(dst, str) else (dst or link_b.link_local_address())
        udp = Udp(header=UdpHeader(src_port=sport, dst_port=dport, length=8 + len(payload)), payload=payload)
        packet = Ipv6Packet.build(
            src, dst, udp, list(extensions),
            hop_limit=hop_limit, traffic_class=traffic_class, flow_label=flow_label,
        )
        return with_udp_checksum(packet)

    return build
