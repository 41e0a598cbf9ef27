"""
Tests for IPHC compression and decompression under capability bounds
"""

import numpy as np
import pytest

from src.core.capability import classify, features_of_level
from src.core.errors import (
    CannotRepresent,
    ConfigError,
    ExpansionExceededError,
    LowpanError,
    MalformedIphc,
    NoSourceAddress,
    UnsupportedFeatureError,
)
from src.core.iphc import (
    compress,
    decompress,
    expansion_of,
    padding_for,
    source_address_of,
    trailing_padding,
)
from src.core.templates import worst_case_frame
from src.core.wire import icmpv6_checksum, serialize_ipv6
from src.models.capability import Feature, FeatureSet
from src.models.codec import ContextTable, DecompressionLimits
from src.models.packet import ExtensionHeader, ExtensionKind, Icmpv6, Ipv6Address, Ipv6Packet

PAYLOAD = bytes(range(10))
MTU_PAYLOAD = 106


@pytest.fixture
def codec(contexts, limits, link_a, link_b):
    """compress/decompress bound to the shared contexts and link addresses"""

    class Codec:
        def compress(self, packet, level, **kw):
            return compress(
                packet, kw.pop("ctx", contexts), features_of_level(level), kw.pop("limits", limits),
                link_src=link_a, link_dst=link_b, **kw,
            )

        def decompress(self, data, level, **kw):
            return decompress(
                data, kw.pop("ctx", contexts), features_of_level(level), kw.pop("limits", limits),
                link_a, link_b,
            )

    return Codec()


class TestCompressLinkLocal:
    """The link-local UDP datagram at each end of the spectrum"""

    def test_level_five_elides_everything(self, codec, udp_packet):
        out = codec.compress(udp_packet, 5)
        assert out.data == bytes.fromhex("7e33f416331633") + PAYLOAD
        assert len(out.data) == 17
        assert out.descriptor.decompression_expansion == 41
        assert out.compressed_header_len == 7
        assert out.uncompressed_header_len == 48
        assert out.uncompressed_size == 58

    def test_level_five_restores_checksum(self, codec, udp_packet):
        restored = codec.decompress(codec.compress(udp_packet, 5).data, 5)
        assert restored == udp_packet
        assert restored.transport.header.checksum == 0xC246

    def test_level_four_carries_checksum(self, codec, udp_packet):
        out = codec.compress(udp_packet, 4)
        assert out.data[:3] == bytes.fromhex("7e33f0")
        assert out.data[7:9] == bytes.fromhex("c246")
        assert out.descriptor.decompression_expansion == 39
        assert Feature.UDP_CHECKSUM_ELISION not in out.descriptor.features_used

    def test_inline_hop_limit_costs_one_octet(self, codec, make_udp):
        out = codec.compress(make_udp(payload=PAYLOAD, hop_limit=63), 4)
        assert out.data[0] == 0x7C
        assert out.data[2] == 63
        assert out.descriptor.decompression_expansion == 38

    def test_level_zero_is_uncompressed(self, codec, udp_packet):
        out = codec.compress(udp_packet, 0)
        assert out.data == b"\x41" + serialize_ipv6(udp_packet)
        assert out.descriptor.features_used == FeatureSet.of(Feature.UNCOMPRESSED_IPV6)
        assert out.descriptor.decompression_expansion == 0

    @pytest.mark.parametrize("level", range(6))
    def test_encoding_stays_inside_level(self, codec, udp_packet, level):
        out = codec.compress(udp_packet, level)
        assert out.descriptor.features_used.issubset(features_of_level(level))
        assert codec.decompress(out.data, level) == udp_packet

    def test_higher_levels_never_longer(self, codec, udp_packet):
        sizes = [len(codec.compress(udp_packet, level).data) for level in range(6)]
        assert sizes == sorted(sizes, reverse=True)


class TestCompressAddresses:
    def test_context_addresses(self, codec, make_udp):
        packet = make_udp("2001:db8::1", "2001:db8::2", payload=PAYLOAD, sport=0xF0B1, dport=0xF0B2)
        out = codec.compress(packet, 5)
        assert out.data[:4] == bytes.fromhex("7e77f712")
        assert Feature.STATEFUL_UNICAST in out.descriptor.features_used
        assert Feature.UDP_PORTS in out.descriptor.features_used
        assert out.descriptor.decompression_expansion == 44
        assert codec.decompress(out.data, 5) == packet

    def test_without_contexts_addresses_go_inline(self, codec, make_udp):
        packet = make_udp("2001:db8::1", "2001:db8::2")
        out = codec.compress(packet, 5, ctx=ContextTable())
        assert Feature.STATEFUL_UNICAST not in out.descriptor.features_used
        assert codec.decompress(out.data, 5, ctx=ContextTable()) == packet

    def test_link_local_multicast(self, codec, make_udp):
        packet = make_udp(dst="ff02::1", hop_limit=255)
        out = codec.compress(packet, 5)
        assert out.data[:2] == bytes.fromhex("7f3b")
        assert Feature.STATELESS_MULTICAST in out.descriptor.features_used
        assert codec.decompress(out.data, 5) == packet

    def test_stateful_multicast_needs_level_two(self, codec, make_udp):
        packet = make_udp(dst="ff35:40:2001:db8::1")
        assert Feature.STATEFUL_MULTICAST in codec.compress(packet, 5).descriptor.features_used
        assert Feature.STATEFUL_MULTICAST not in codec.compress(packet, 1).descriptor.features_used


class TestCompressBounds:
    """Compression respects the receiver's features and expansion bound"""

    def test_expansion_bound_forces_less_compression(self, codec, udp_packet):
        tight = DecompressionLimits(max_expansion=38, max_tunnel_depth=1)
        out = codec.compress(udp_packet, 5, limits=tight)
        assert out.descriptor.decompression_expansion <= 38
        assert codec.decompress(out.data, 5, limits=tight) == udp_packet

    def test_zero_bound_falls_back_to_uncompressed(self, codec, udp_packet):
        out = codec.compress(udp_packet, 5, limits=DecompressionLimits(max_expansion=0))
        assert out.data[0] == 0x41

    def test_cannot_represent(self, contexts, limits, udp_packet):
        with pytest.raises(CannotRepresent):
            compress(udp_packet, contexts, FeatureSet.of(Feature.FRAGMENTATION), limits)

    def test_hop_by_hop_compressed_at_level_five(self, codec, make_udp):
        hbh = ExtensionHeader(kind=ExtensionKind.HOP_BY_HOP, body=bytes([0x01, 0x04, 0, 0, 0, 0]))
        packet = make_udp(payload=PAYLOAD, extensions=[hbh])
        out = codec.compress(packet, 5)
        assert Feature.EXTENSION_HEADERS in out.descriptor.features_used
        assert codec.decompress(out.data, 5) == packet

    def test_extension_headers_inline_below_level_five(self, codec, make_udp):
        hbh = ExtensionHeader(kind=ExtensionKind.HOP_BY_HOP, body=bytes([0x01, 0x04, 0, 0, 0, 0]))
        packet = make_udp(payload=PAYLOAD, extensions=[hbh])
        out = codec.compress(packet, 4)
        assert Feature.EXTENSION_HEADERS not in out.descriptor.features_used
        assert codec.decompress(out.data, 4) == packet


class TestDecompress:
    def test_unsupported_feature(self, codec, udp_packet):
        data = codec.compress(udp_packet, 5).data
        with pytest.raises(UnsupportedFeatureError) as info:
            codec.decompress(data, 4)
        assert info.value.feature is Feature.UDP_CHECKSUM_ELISION

    def test_level_zero_receiver_names_iphc(self, codec, udp_packet):
        data = codec.compress(udp_packet, 3).data
        with pytest.raises(UnsupportedFeatureError) as info:
            codec.decompress(data, 0)
        assert info.value.reason == "IphcDispatch"

    def test_expansion_exceeded(self, codec, udp_packet):
        data = codec.compress(udp_packet, 5).data
        with pytest.raises(ExpansionExceededError):
            codec.decompress(data, 5, limits=DecompressionLimits(max_expansion=40))

    def test_fragment_dispatch_is_not_a_datagram(self, codec):
        with pytest.raises(MalformedIphc):
            codec.decompress(bytes.fromhex("c03a0001"), 5)

    def test_truncated_iphc(self, codec):
        with pytest.raises(LowpanError):
            codec.decompress(b"\x7e", 5)

    def test_expansion_of(self, contexts):
        assert expansion_of(bytes.fromhex("7e33f416331633") + PAYLOAD, contexts) == 41

    def test_expansion_of_needs_provisioned_contexts(self, contexts):
        frame = bytes.fromhex("7e77f712") + PAYLOAD
        assert expansion_of(frame, contexts) == 44
        with pytest.raises(MalformedIphc):
            expansion_of(frame, ContextTable())

    def test_one_octet_over_the_default_bound(self, codec):
        # padding-elided hop-by-hop, destination options needing one Pad1, short UDP
        frame = bytes.fromhex("7f33e100e7050103000000f700") + PAYLOAD
        assert expansion_of(frame, ContextTable()) == 51
        with pytest.raises(ExpansionExceededError):
            codec.decompress(frame, 5)

    def test_exactly_the_default_bound(self, codec):
        frame = bytes.fromhex("7f33e100e706010400000000f700") + PAYLOAD
        assert expansion_of(frame, ContextTable()) == 50
        packet = codec.decompress(frame, 5)
        assert [e.kind for e in packet.extensions] == [ExtensionKind.HOP_BY_HOP, ExtensionKind.DESTINATION_OPTIONS]
        assert packet.transport.payload == PAYLOAD


class TestWorstCaseFrame:
    """Deepest header expansion one 127-octet frame can carry"""

    def test_expansion_bracket(self, contexts):
        frame = worst_case_frame(MTU_PAYLOAD)
        assert len(frame) == MTU_PAYLOAD
        assert 1100 <= expansion_of(frame, contexts) <= 1280
        assert expansion_of(frame, contexts) == 1154
        assert Feature.TUNNELED_IPV6 in classify(frame).features_used

    def test_rejected_under_default_bound(self, codec):
        with pytest.raises(ExpansionExceededError):
            codec.decompress(worst_case_frame(MTU_PAYLOAD), 5)

    def test_decompresses_when_allowed(self, codec):
        limits = DecompressionLimits(max_expansion=1200, max_tunnel_depth=30)
        packet = codec.decompress(worst_case_frame(MTU_PAYLOAD), 5, limits=limits)
        assert packet.wire_length == 1260
        assert packet.tunneled is not None

    def test_frame_too_small(self):
        with pytest.raises(ConfigError):
            worst_case_frame(3)


class TestSourceAddress:
    """Recovering the source without full decompression"""

    def test_link_derived(self, codec, udp_packet, contexts, link_a):
        data = codec.compress(udp_packet, 5).data
        assert source_address_of(data, contexts, link_a) == Ipv6Address.parse("fe80::1")

    def test_uncompressed(self, codec, udp_packet, contexts):
        data = codec.compress(udp_packet, 0).data
        assert source_address_of(data, contexts) == udp_packet.src

    def test_subsequent_fragment_has_none(self, contexts):
        with pytest.raises(NoSourceAddress):
            source_address_of(bytes.fromhex("e03a000105") + bytes(8), contexts)

    def test_link_derived_without_link_address(self, codec, udp_packet, contexts):
        data = codec.compress(udp_packet, 5).data
        with pytest.raises(NoSourceAddress):
            source_address_of(data, contexts, None)


class TestPadding:
    def test_pad1(self):
        assert trailing_padding(bytes([0x01, 0x03, 1, 2, 3, 0x00])) == 1

    def test_padn(self):
        assert trailing_padding(bytes([0x05, 0x00, 0x01, 0x02, 0x00, 0x00])) == 4

    def test_nonzero_padn_is_data(self):
        assert trailing_padding(bytes([0x05, 0x00, 0x01, 0x02, 0xAA, 0x00])) == 0

    def test_padding_for(self):
        assert padding_for(8) == b""
        assert padding_for(7) == b"\x00"
        assert padding_for(4) == bytes([1, 2, 0, 0])


class TestRandomDatagrams:
    """Seeded random datagrams stay decodable at every level"""

    HOSTS = ["fe80::1", "fe80::2", "2001:db8::1", "2001:db8::ff:fe00:5", "2001:470::9", "ff02::1", "ff02::1:ff00:5"]

    @staticmethod
    def options_header(rng, kind):
        size = int(rng.integers(0, 11))
        option = bytes([0x1E, size]) + rng.bytes(size)
        return ExtensionHeader(kind=kind, body=option + padding_for(2 + len(option)))

    def random_packet(self, rng, make_udp):
        src, dst = str(rng.choice(self.HOSTS[:5])), str(rng.choice(self.HOSTS))
        extensions = []
        if rng.random() < 0.3:
            extensions.append(self.options_header(rng, ExtensionKind.HOP_BY_HOP))
        if rng.random() < 0.3:
            extensions.append(self.options_header(rng, ExtensionKind.DESTINATION_OPTIONS))
        hop_limit = int(rng.choice([1, 64, 255, int(rng.integers(0, 256))]))
        traffic_class = int(rng.choice([0, 0xB8, int(rng.integers(0, 256))]))
        flow_label = int(rng.choice([0, int(rng.integers(0, 1 << 20))]))
        payload = rng.bytes(int(rng.integers(0, 40)))
        if rng.random() < 0.2:
            src, dst = Ipv6Address.parse(src), Ipv6Address.parse(dst)
            message = bytearray([128, 0, 0, 0]) + rng.bytes(4) + payload
            message[2:4] = icmpv6_checksum(src, dst, bytes(message)).to_bytes(2, "big")
            return Ipv6Packet.build(
                src, dst, Icmpv6(data=bytes(message)), extensions,
                hop_limit=hop_limit, traffic_class=traffic_class, flow_label=flow_label,
            )
        return make_udp(
            src, dst,
            payload=payload,
            sport=int(rng.choice([5683, 0xF0B3, 0xF012, int(rng.integers(0, 0x10000))])),
            dport=int(rng.choice([5683, 0xF0BC, 0xF0FE, int(rng.integers(0, 0x10000))])),
            hop_limit=hop_limit,
            traffic_class=traffic_class,
            flow_label=flow_label,
            extensions=extensions,
        )

    @pytest.mark.slow
    def test_every_level(self, codec, make_udp):
        rng = np.random.default_rng(7)
        levels = [features_of_level(level) for level in range(6)]
        for _ in range(10_000):
            packet = self.random_packet(rng, make_udp)
            for level, allowed in enumerate(levels):
                out = codec.compress(packet, level)
                assert out.descriptor.features_used.issubset(allowed)
                assert out.descriptor.decompression_expansion <= 50
                assert codec.decompress(out.data, level) == packet
