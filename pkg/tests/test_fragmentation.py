"""
Tests for RFC 4944 fragmentation and the reassembly pool
"""

import numpy as np
import pytest

from src.core.capability import features_of_level
from src.core.errors import InvariantViolation, TooLarge
from src.core.fragmentation import FeedStatus, ReassemblyPool, fragment
from src.core.headers import parse_frag_header
from src.core.iphc import compress
from src.models.capability import Feature, FeatureSet
from src.models.codec import CompressedDatagram, FragKind

MTU = 106


@pytest.fixture
def big_packet(make_udp):
    return make_udp(payload=bytes(i % 251 for i in range(300)))


@pytest.fixture
def compressed(big_packet, contexts, limits, link_a, link_b):
    return compress(big_packet, contexts, features_of_level(5), limits, link_src=link_a, link_dst=link_b)


@pytest.fixture
def fragments(compressed):
    return fragment(compressed, compressed.uncompressed_size, MTU, tag=7)


@pytest.fixture
def pool(contexts, limits):
    return ReassemblyPool(contexts, features_of_level(5), limits, capacity=2, timeout=60, mtu_payload=MTU)


def feed_all(pool, payloads, link_a, link_b, now=0):
    return [pool.feed(p, link_a, link_b, now) for p in payloads]


class TestFragment:
    """Splitting compressed datagrams into frame payloads"""

    def test_small_datagram_is_not_fragmented(self, udp_packet, contexts, limits, link_a, link_b):
        out = compress(udp_packet, contexts, features_of_level(5), limits, link_src=link_a, link_dst=link_b)
        assert fragment(out, out.uncompressed_size, MTU, tag=1) == [out.data]

    def test_fragment_layout(self, compressed, fragments):
        assert compressed.uncompressed_size == 348
        assert len(fragments) == 4
        assert all(len(p) <= MTU for p in fragments)
        assert fragments[0][:4] == bytes([0xC1, 0x5C, 0x00, 0x07])
        assert fragments[0][4:11] == compressed.data[:7]

    def test_offsets(self, fragments):
        headers = [parse_frag_header(p)[0] for p in fragments]
        assert headers[0].kind == FragKind.FIRST
        assert [h.datagram_offset for h in headers[1:]] == [17, 29, 41]
        assert {h.datagram_tag for h in headers} == {7}
        assert {h.datagram_size for h in headers} == {348}

    def test_last_fragment_carries_the_tail(self, fragments):
        assert len(parse_frag_header(fragments[-1])[1]) == 20

    def test_uncompressed_datagram(self, big_packet, contexts, limits):
        out = compress(big_packet, contexts, features_of_level(0), limits)
        payloads = fragment(out, out.uncompressed_size, MTU, tag=3)
        assert out.uncompressed_size == 348
        assert len(payloads[0]) == 4 + 1 + 96

    def test_datagram_size_field_limit(self, compressed):
        huge = CompressedDatagram(
            data=b"\x41" + bytes(2100),
            descriptor=compressed.descriptor,
            compressed_header_len=1,
            uncompressed_header_len=0,
        )
        with pytest.raises(TooLarge):
            fragment(huge, 2100, MTU, tag=1)

    def test_tiny_mtu_rejected(self, compressed):
        with pytest.raises(InvariantViolation):
            fragment(compressed, compressed.uncompressed_size, 15, tag=1)

    def test_size_must_match(self, compressed):
        with pytest.raises(InvariantViolation):
            fragment(compressed, compressed.uncompressed_size + 1, MTU, tag=1)


class TestReassembly:
    """Reassembly pool behaviour"""

    def test_in_order(self, pool, fragments, big_packet, link_a, link_b):
        results = feed_all(pool, fragments, link_a, link_b)
        assert [r.status for r in results] == [FeedStatus.INCOMPLETE] * 3 + [FeedStatus.COMPLETE]
        assert results[-1].packet == big_packet
        assert pool.stats["completed"] == 1
        assert len(pool) == 0

    def test_any_order(self, pool, fragments, big_packet, link_a, link_b):
        order = [fragments[2], fragments[0], fragments[3], fragments[1]]
        results = feed_all(pool, order, link_a, link_b)
        assert results[-1].status == FeedStatus.COMPLETE
        assert results[-1].packet == big_packet

    def test_duplicate_after_completion_is_discarded(self, pool, fragments, link_a, link_b):
        feed_all(pool, fragments, link_a, link_b)
        late = pool.feed(fragments[1], link_a, link_b, 5)
        assert late.status == FeedStatus.DISCARDED
        assert len(pool) == 0
        assert pool.feed(fragments[1], link_a, link_b, 61).status == FeedStatus.INCOMPLETE

    def test_identical_duplicate_is_harmless(self, pool, fragments, big_packet, link_a, link_b):
        order = [fragments[0], fragments[1], fragments[1], fragments[2], fragments[3]]
        results = feed_all(pool, order, link_a, link_b)
        assert results[2].status == FeedStatus.INCOMPLETE
        assert results[-1].packet == big_packet

    def test_conflicting_overlap(self, pool, fragments, link_a, link_b):
        altered = fragments[1][:-1] + bytes([fragments[1][-1] ^ 0xFF])
        results = feed_all(pool, [fragments[1], altered, fragments[2]], link_a, link_b)
        assert results[1].status == FeedStatus.ERROR
        assert results[1].reason == "Conflict"
        assert results[2].status == FeedStatus.DISCARDED
        assert pool.stats["failed"] == 1

    def test_timeout(self, pool, fragments, link_a, link_b):
        assert pool.feed(fragments[0], link_a, link_b, 0).status == FeedStatus.INCOMPLETE
        late = pool.feed(fragments[1], link_a, link_b, 61)
        assert late.status == FeedStatus.ERROR
        assert late.reason == "Timeout"

    def test_expired_buffers_are_purged(self, pool, fragments, compressed, link_a, link_b):
        pool.feed(fragments[0], link_a, link_b, 0)
        other = fragment(compressed, compressed.uncompressed_size, MTU, tag=8)
        assert pool.feed(other[0], link_a, link_b, 100).status == FeedStatus.INCOMPLETE
        assert pool.stats["expired"] == 1
        assert len(pool) == 1

    def test_pool_full(self, contexts, limits, compressed, link_a, link_b):
        pool = ReassemblyPool(contexts, features_of_level(5), limits, capacity=1, timeout=60, mtu_payload=MTU)
        first = fragment(compressed, compressed.uncompressed_size, MTU, tag=1)
        second = fragment(compressed, compressed.uncompressed_size, MTU, tag=2)
        assert pool.feed(first[0], link_a, link_b, 0).status == FeedStatus.INCOMPLETE
        result = pool.feed(second[0], link_a, link_b, 0)
        assert result.status == FeedStatus.ERROR
        assert result.reason == "ReassemblyPoolFull"
        assert pool.stats["overflow"] == 1

    def test_senders_do_not_collide(self, pool, fragments, big_packet, link_a, link_b):
        pool.feed(fragments[0], link_b, link_a, 0)
        results = feed_all(pool, fragments, link_a, link_b)
        assert results[-1].packet == big_packet
        assert len(pool) == 1

    def test_unsupported_first_fragment(self, contexts, limits, fragments, link_a, link_b):
        pool = ReassemblyPool(contexts, features_of_level(4), limits, capacity=2, timeout=60, mtu_payload=MTU)
        result = pool.feed(fragments[0], link_a, link_b, 0)
        assert result.status == FeedStatus.ERROR
        assert result.reason == "UdpChecksumElision"
        assert result.missing is Feature.UDP_CHECKSUM_ELISION

    def test_uncompressed_fragments(self, contexts, limits, big_packet, link_a, link_b):
        out = compress(big_packet, contexts, features_of_level(0), limits)
        pool = ReassemblyPool(
            contexts, FeatureSet.of(Feature.UNCOMPRESSED_IPV6), limits, capacity=1, timeout=60, mtu_payload=MTU
        )
        results = feed_all(pool, fragment(out, out.uncompressed_size, MTU, tag=9), link_a, link_b)
        assert results[-1].status == FeedStatus.COMPLETE
        assert results[-1].packet == big_packet

    def test_not_a_fragment(self, pool, link_a, link_b):
        result = pool.feed(bytes.fromhex("7e33"), link_a, link_b, 0)
        assert result.status == FeedStatus.ERROR
        assert result.reason == "MalformedHeader"


@pytest.mark.slow
class TestFullSizeDatagram:
    """A 1280-octet datagram over 106-octet frame payloads"""

    @pytest.fixture
    def full_packet(self, make_udp):
        return make_udp(payload=bytes(i % 253 for i in range(1280 - 48)))

    def test_seeded_permutations(self, full_packet, contexts, limits, link_a, link_b):
        out = compress(full_packet, contexts, features_of_level(5), limits, link_src=link_a, link_dst=link_b)
        assert out.uncompressed_size == 1280
        payloads = fragment(out, out.uncompressed_size, MTU, tag=0x1280)
        assert all(len(p) <= MTU for p in payloads)
        rng = np.random.default_rng(1280)
        for _ in range(1000):
            pool = ReassemblyPool(contexts, features_of_level(5), limits, capacity=1, timeout=60, mtu_payload=MTU)
            order = [payloads[i] for i in rng.permutation(len(payloads))]
            results = feed_all(pool, order, link_a, link_b)
            assert [r.status for r in results[:-1]] == [FeedStatus.INCOMPLETE] * (len(payloads) - 1)
            assert results[-1].status == FeedStatus.COMPLETE
            assert results[-1].packet == full_packet
