"""
Tests for the capability algebra: levels, FLEX sets, negotiation,
classification and the legacy stack profiles
"""

import pytest

from src.core.capability import (
    CONTIKI_DECOMPRESSION_LIMIT,
    LEGACY_PROFILES,
    check_descriptor,
    classify,
    close_over_prerequisites,
    features_of_level,
    flex_decode,
    flex_encode,
    get_profile,
    level_of,
    load_feature_table,
    negotiate,
    p6lowpan_profile,
    profile_accepts,
    profile_level,
)
from src.core.errors import (
    BadLength,
    ConfigError,
    ExpansionExceededError,
    MalformedHeader,
    ReservedBitsSet,
    UnknownDispatch,
    UnsupportedFeatureError,
)
from src.core.wire import serialize_ipv6
from src.models.capability import (
    FEATURE_COUNT,
    CapabilityLevel,
    CapabilitySet,
    EncodingDescriptor,
    Feature,
    FeatureSet,
)

L5_LINK_LOCAL_HEADER = bytes.fromhex("7e33f416331633")


class TestFeatures:
    """Feature indices, names and levels"""

    def test_twenty_six_features(self):
        assert FEATURE_COUNT == 26

    def test_labels(self):
        assert Feature.UNCOMPRESSED_IPV6.label == "UncompressedIpv6"
        assert Feature.UDP_CHECKSUM_ELISION.label == "UdpChecksumElision"

    def test_from_name_accepts_any_spelling(self):
        assert Feature.from_name("hop_limit") is Feature.HOP_LIMIT
        assert Feature.from_name("HopLimit") is Feature.HOP_LIMIT
        assert Feature.from_name("HOP_LIMIT") is Feature.HOP_LIMIT
        with pytest.raises(ValueError):
            Feature.from_name("warp_drive")

    def test_levels_are_contiguous_ranges(self):
        levels = [int(f.level) for f in Feature]
        assert levels == sorted(levels)
        assert Feature.IPHC_DISPATCH.level == CapabilityLevel.LEVEL_1
        assert Feature.STATEFUL_UNICAST.level == CapabilityLevel.LEVEL_2
        assert Feature.MESH_HEADER.level == CapabilityLevel.LEVEL_5

    def test_feature_set_rejects_undefined_bits(self):
        with pytest.raises(ValueError):
            FeatureSet(bits=1 << 30)


class TestLevels:
    """Cumulative level feature sets"""

    def test_level_sizes(self):
        assert [len(features_of_level(level)) for level in range(6)] == [4, 10, 12, 15, 20, 26]

    def test_levels_nest(self):
        for level in range(5):
            assert features_of_level(level).issubset(features_of_level(level + 1))

    def test_level_five_is_everything(self):
        assert features_of_level(5) == FeatureSet.universe()

    def test_level_of(self):
        assert level_of(FeatureSet.empty()) == CapabilityLevel.LEVEL_0
        assert level_of(FeatureSet.of(Feature.FRAGMENTATION)) == CapabilityLevel.LEVEL_0
        assert level_of(FeatureSet.of(Feature.FRAGMENTATION, Feature.HOP_LIMIT)) == CapabilityLevel.LEVEL_3

    def test_linear_equivalent_to_flex(self):
        assert CapabilitySet.linear(3).equivalent(CapabilitySet.flex(features_of_level(3)))
        assert not CapabilitySet.linear(3).equivalent(CapabilitySet.flex(features_of_level(2)))

    def test_capability_set_needs_one_variant(self):
        with pytest.raises(ValueError):
            CapabilitySet(mode="linear")
        with pytest.raises(ValueError):
            CapabilitySet(mode="flex", level=2, features=FeatureSet.empty())

    def test_str(self):
        assert str(CapabilitySet.linear(2)) == "Linear(2)"
        assert str(CapabilitySet.flex(features_of_level(0))) == "Flex(0x0000000f)"


class TestNegotiation:
    def test_linear_pair_takes_lower_level(self):
        assert negotiate(CapabilitySet.linear(5), CapabilitySet.linear(2)) == CapabilitySet.linear(2)
        assert negotiate(CapabilitySet.linear(1), CapabilitySet.linear(4)) == CapabilitySet.linear(1)

    def test_negotiation_is_symmetric(self):
        a = CapabilitySet.flex(features_of_level(3).without(Feature.FLOW_LABEL))
        b = CapabilitySet.linear(4)
        assert negotiate(a, b) == negotiate(b, a)

    def test_flex_intersection(self):
        a = CapabilitySet.flex(features_of_level(3))
        b = CapabilitySet.flex(features_of_level(5).without(Feature.TRAFFIC_CLASS))
        result = negotiate(a, b)
        assert not result.is_linear
        assert result.feature_set == features_of_level(3).without(Feature.TRAFFIC_CLASS)

    def test_flex_prunes_orphaned_features(self):
        a = CapabilitySet.flex(features_of_level(4))
        b = CapabilitySet.flex(features_of_level(4).without(Feature.UDP_LENGTH_ELISION))
        result = negotiate(a, b).feature_set
        assert Feature.UDP_NHC not in result
        assert Feature.UDP_PORTS not in result
        assert Feature.IPHC_DISPATCH in result

    def test_missing_iphc_prunes_everything_compressed(self):
        closed = close_over_prerequisites(features_of_level(5).without(Feature.IPHC_DISPATCH))
        assert closed.issubset(
            FeatureSet.of(
                Feature.UNCOMPRESSED_IPV6,
                Feature.FRAGMENTATION,
                Feature.PACKETS_1280,
                Feature.STATELESS_SRC_DECOMPRESSION,
                Feature.MESH_HEADER,
                Feature.BROADCAST_HEADER,
            )
        )

    def test_levels_are_closed(self):
        for level in range(6):
            assert close_over_prerequisites(features_of_level(level)) == features_of_level(level)


class TestFlexWireForm:
    """32-bit FLEX bitfield, feature 0 in the most significant bit"""

    def test_level_zero(self):
        assert flex_encode(features_of_level(0)) == bytes.fromhex("f0000000")

    def test_level_five(self):
        assert flex_encode(features_of_level(5)) == bytes.fromhex("ffffffc0")

    def test_single_feature(self):
        assert flex_encode(FeatureSet.of(Feature.UDP_CHECKSUM_ELISION)) == bytes.fromhex("00000040")

    def test_decode(self):
        features = FeatureSet.of(Feature.IPHC_DISPATCH, Feature.IPV6_LENGTH_VERSION_ELISION, Feature.HOP_LIMIT)
        assert flex_decode(flex_encode(features)) == features

    def test_wrong_length(self):
        with pytest.raises(BadLength):
            flex_decode(b"\xff\xff\xff")

    def test_reserved_bits(self):
        with pytest.raises(ReservedBitsSet):
            flex_decode(bytes.fromhex("00000001"))


class TestClassify:
    """Classifying wire frames into the features they exercise"""

    def test_uncompressed_dispatch(self, udp_packet):
        descriptor = classify(b"\x41" + serialize_ipv6(udp_packet))
        assert descriptor.features_used == FeatureSet.of(Feature.UNCOMPRESSED_IPV6)
        assert descriptor.required_level == CapabilityLevel.LEVEL_0
        assert descriptor.decompression_expansion == 0

    def test_fully_compressed_link_local(self, link_a, link_b):
        frame = L5_LINK_LOCAL_HEADER + bytes(range(10))
        descriptor = classify(frame, link_src=link_a, link_dst=link_b)
        assert descriptor.required_level == CapabilityLevel.LEVEL_5
        assert descriptor.decompression_expansion == 41
        used = descriptor.features_used
        for feature in (
            Feature.IPHC_DISPATCH,
            Feature.TRAFFIC_CLASS,
            Feature.FLOW_LABEL,
            Feature.HOP_LIMIT,
            Feature.ADDRESS_AUTOCONFIGURATION,
            Feature.UDP_NHC,
            Feature.UDP_CHECKSUM_ELISION,
        ):
            assert feature in used
        assert Feature.UDP_PORTS not in used
        assert Feature.SHORT_LINK_ADDRESS not in used

    def test_first_fragment_marks_fragmentation(self, udp_packet):
        body = b"\x41" + serialize_ipv6(udp_packet)
        frag1 = bytes([0xC0, len(body) - 1, 0x00, 0x07]) + body
        used = classify(frag1).features_used
        assert Feature.FRAGMENTATION in used
        assert Feature.PACKETS_1280 in used
        assert Feature.UNCOMPRESSED_IPV6 in used

    def test_empty_payload(self):
        with pytest.raises(MalformedHeader):
            classify(b"")

    def test_unknown_dispatch(self):
        with pytest.raises(UnknownDispatch):
            classify(b"\x00\x01\x02")


class TestCheckDescriptor:
    def _descriptor(self, *features, expansion=0):
        used = FeatureSet.of(*features)
        return EncodingDescriptor(
            features_used=used, required_level=level_of(used), decompression_expansion=expansion
        )

    def test_reports_lowest_missing_feature(self):
        descriptor = self._descriptor(Feature.HOP_LIMIT, Feature.UDP_CHECKSUM_ELISION, Feature.IPHC_DISPATCH)
        with pytest.raises(UnsupportedFeatureError) as info:
            check_descriptor(descriptor, features_of_level(1), 50)
        assert info.value.feature is Feature.HOP_LIMIT
        assert info.value.reason == "HopLimit"

    def test_expansion_limit(self):
        descriptor = self._descriptor(Feature.IPHC_DISPATCH, expansion=41)
        check_descriptor(descriptor, features_of_level(5), 41)
        with pytest.raises(ExpansionExceededError) as info:
            check_descriptor(descriptor, features_of_level(5), 40)
        assert info.value.reason == "ExpansionExceeded"
        assert (info.value.expansion, info.value.limit) == (41, 40)


class TestProfiles:
    """Legacy stack profiles of the interoperability matrix"""

    def test_six_profiles(self):
        assert sorted(LEGACY_PROFILES) == ["contiki", "contiki-ng", "mbed", "openthread", "riot", "tinyos"]

    def test_lookup_is_case_insensitive(self):
        assert get_profile("OpenThread") is LEGACY_PROFILES["openthread"]
        with pytest.raises(KeyError):
            get_profile("lwip")

    def test_contiki_limit(self):
        assert get_profile("contiki").decompression_limit == CONTIKI_DECOMPRESSION_LIMIT == 38

    def test_openthread_rejects_uncompressed(self):
        assert Feature.UNCOMPRESSED_IPV6 not in get_profile("openthread").features
        assert not get_profile("openthread").regular_nd

    def test_rfc6775_stacks(self):
        assert {name for name, p in LEGACY_PROFILES.items() if p.rfc6775_nd} == {"riot", "mbed"}

    def test_tinyos_receives_mesh_but_never_sends_it(self):
        tinyos = get_profile("tinyos")
        assert Feature.MESH_HEADER in tinyos.features
        assert Feature.MESH_HEADER not in tinyos.sending
        assert not tinyos.forwards_mesh

    def test_profile_levels(self):
        levels = {name: profile_level(p) for name, p in LEGACY_PROFILES.items()}
        assert levels == {
            "contiki": 1,
            "contiki-ng": 1,
            "openthread": None,
            "riot": 3,
            "mbed": 4,
            "tinyos": 1,
        }

    def test_short_addresses_can_lower_a_level(self):
        assert profile_level(get_profile("contiki"), short_link_addresses=True) == 0

    def test_p6lowpan_profile(self):
        profile = p6lowpan_profile(CapabilitySet.linear(3), max_expansion=44)
        assert profile.is_p6lowpan
        assert profile.name == "P6LoWPAN Linear(3)"
        assert profile.features == features_of_level(3)
        assert profile.decompression_limit == 44
        assert profile.sends_icmp_on_unsupported


class TestProfileAccepts:
    def _udp_descriptor(self, level, expansion):
        used = features_of_level(level) & FeatureSet.of(
            Feature.IPHC_DISPATCH, Feature.IPV6_LENGTH_VERSION_ELISION, Feature.HOP_LIMIT, Feature.UDP_NHC,
            Feature.UDP_LENGTH_ELISION,
        )
        return EncodingDescriptor(
            features_used=used, required_level=level_of(used), decompression_expansion=expansion
        )

    def test_accept(self):
        verdict = profile_accepts(get_profile("riot"), self._udp_descriptor(4, 39))
        assert verdict.accepted
        assert str(verdict) == "Accept"

    def test_contiki_decompression_limit(self):
        contiki = get_profile("contiki")
        assert profile_accepts(contiki, self._udp_descriptor(4, 38)).accepted
        verdict = profile_accepts(contiki, self._udp_descriptor(4, 39))
        assert not verdict.accepted
        assert verdict.reason == "DecompressionLimit"
        assert verdict.missing is None

    def test_missing_feature_named(self):
        used = FeatureSet.of(Feature.UNCOMPRESSED_IPV6)
        descriptor = EncodingDescriptor(features_used=used, required_level=0, decompression_expansion=0)
        verdict = profile_accepts(get_profile("openthread"), descriptor)
        assert verdict.reason == "UncompressedIpv6"
        assert verdict.missing is Feature.UNCOMPRESSED_IPV6
        assert str(verdict) == "Drop(UncompressedIpv6)"


class TestFeatureTable:
    def test_table_matches_enumeration(self):
        rows = load_feature_table()
        assert len(rows) == FEATURE_COUNT
        assert rows[0][:3] == (0, "UNCOMPRESSED_IPV6", 0)
        assert rows[-1][:3] == (25, "UDP_CHECKSUM_ELISION", 5)

    def test_disagreeing_table_rejected(self, tmp_path):
        table = tmp_path / "table.txt"
        table.write_text("0 | FRAGMENTATION | 0 | RFC 4944\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_feature_table(table)
