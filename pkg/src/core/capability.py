"""
Capability algebra

Linear levels and FLEX feature sets, negotiation between neighbours,
classification of wire frames into the features they exercise, and the
six legacy stack profiles of the interoperability matrix.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import bitstruct

from src.core.encoding import chain_features, parse_chain
from src.core.errors import (
    BadLength,
    ConfigError,
    ExpansionExceededError,
    MalformedHeader,
    ReservedBitsSet,
    UnsupportedFeatureError,
)
from src.core.headers import DispatchKind, dispatch_kind, parse_frag_header, parse_mesh_broadcast
from src.core.wire import raw_chain_end
from src.models.capability import (
    FEATURE_COUNT,
    FEATURE_PREREQUISITES,
    AcceptanceVerdict,
    CapabilityLevel,
    CapabilitySet,
    EncodingDescriptor,
    Feature,
    FeatureSet,
    StackProfile,
    level_feature_set,
)
from src.models.packet import LinkAddress
from src.utils.config import get_config
from src.utils.logger import get_logger

logger = get_logger(__name__)

FLEX_WIRE_LEN = 4
# Feature 0 is the most significant bit; the trailing six bits are reserved
_FLEX = bitstruct.compile("b1" * FEATURE_COUNT + f"u{32 - FEATURE_COUNT}")

FEATURE_TABLE_PATH = Path(__file__).resolve().parent.parent / "data" / "feature_table.txt"


# ============================================================================
# Levels
# ============================================================================

def features_of_level(level: int) -> FeatureSet:
    """Cumulative feature set of a linear level"""
    return level_feature_set(CapabilityLevel(level))


def level_of(features: FeatureSet) -> CapabilityLevel:
    """Lowest level whose feature set contains `features`"""
    for level in CapabilityLevel:
        if features.issubset(level_feature_set(level)):
            return level
    # Level 5 is the full universe, so this is unreachable for valid sets
    return CapabilityLevel.LEVEL_5


def close_over_prerequisites(features: FeatureSet) -> FeatureSet:
    """Largest subset of `features` in which every member's prerequisites are present"""
    current = features
    while True:
        pruned = current
        for feature in current.members():
            needs = FEATURE_PREREQUISITES.get(feature)
            if needs and not all(n in current for n in needs):
                pruned = pruned.without(feature)
        if pruned.bits == current.bits:
            return current
        current = pruned


def negotiate(a: CapabilitySet, b: CapabilitySet) -> CapabilitySet:
    """
    Capability two neighbours can both handle

    Linear pairs fall back to the lower level. Any FLEX operand turns the
    result into the intersection of both feature sets, pruned of features
    whose prerequisites did not survive.
    """
    if a.is_linear and b.is_linear:
        return CapabilitySet.linear(min(a.level, b.level))
    common = a.feature_set & b.feature_set
    closed = close_over_prerequisites(common)
    if closed.bits != common.bits:
        logger.debug("negotiation_pruned", dropped=(common - closed).labels())
    return CapabilitySet.flex(closed)


def profile_level(profile: StackProfile, short_link_addresses: bool = False) -> Optional[CapabilityLevel]:
    """
    Highest linear level a profile fully covers

    SHORT_LINK_ADDRESS only counts when the deployment actually uses 16-bit
    link addresses. Returns None when even level 0 is not covered.
    """
    best: Optional[CapabilityLevel] = None
    for level in CapabilityLevel:
        needed = level_feature_set(level)
        if not short_link_addresses:
            needed = needed.without(Feature.SHORT_LINK_ADDRESS)
        if not needed.issubset(profile.features):
            break
        best = level
    return best


# ============================================================================
# FLEX wire form
# ============================================================================

def flex_encode(features: FeatureSet) -> bytes:
    flags = [feature in features for feature in Feature]
    return _FLEX.pack(*flags, 0)


def flex_decode(raw: bytes) -> FeatureSet:
    """
    Raises:
        BadLength: not exactly four octets
        ReservedBitsSet: any of the six unmapped low-order bits set
    """
    if len(raw) != FLEX_WIRE_LEN:
        raise BadLength(f"FLEX bitfield is {FLEX_WIRE_LEN} octets, got {len(raw)}")
    *flags, reserved = _FLEX.unpack(raw)
    if reserved:
        raise ReservedBitsSet(f"reserved FLEX bits {reserved:#04x}")
    return FeatureSet.of(*(Feature(i) for i, flag in enumerate(flags) if flag))


# ============================================================================
# Classification
# ============================================================================

def _descriptor(features: List[Feature], expansion: int) -> EncodingDescriptor:
    used = FeatureSet.of(*features)
    return EncodingDescriptor(
        features_used=used,
        required_level=level_of(used),
        decompression_expansion=expansion,
    )


def _classify_datagram(
    data: bytes,
    link_src: Optional[LinkAddress],
    link_dst: Optional[LinkAddress],
    first_fragment: bool,
) -> Tuple[List[Feature], int]:
    kind = dispatch_kind(data[0])
    if kind == DispatchKind.IPV6:
        return [Feature.UNCOMPRESSED_IPV6], 0
    if kind != DispatchKind.IPHC:
        raise MalformedHeader(f"{kind.value} dispatch where a datagram was expected")

    chain = parse_chain(data, 0)
    short_src = link_src is not None and link_src.is_short
    short_dst = link_dst is not None and link_dst.is_short
    features = chain_features(chain, short_src, short_dst)
    if first_fragment and raw_chain_end(data, chain.end, chain.tail_next_header) is None:
        features.append(Feature.COMPRESSION_PAST_FIRST_FRAGMENT)
    return features, chain.expansion


def classify(
    frame_payload: bytes,
    *,
    link_src: Optional[LinkAddress] = None,
    link_dst: Optional[LinkAddress] = None,
) -> EncodingDescriptor:
    """
    Features a frame's encoding exercises and how far its headers expand

    Link addresses are only needed to recognise addresses derived from
    16-bit short addresses; a mesh header supplies its own.

    Raises:
        UnknownDispatch: first octet is not a 6LoWPAN dispatch
        MalformedIphc / MalformedHeader: truncated or inconsistent headers
    """
    if not frame_payload:
        raise MalformedHeader("empty frame payload")
    dispatch_kind(frame_payload[0])
    mesh, bc, rest = parse_mesh_broadcast(frame_payload)

    features: List[Feature] = []
    if mesh is not None:
        features.append(Feature.MESH_HEADER)
        link_src, link_dst = mesh.originator, mesh.final
    if bc is not None:
        features.append(Feature.BROADCAST_HEADER)

    expansion = 0
    kind = dispatch_kind(rest[0])
    if kind in (DispatchKind.FRAG1, DispatchKind.FRAGN):
        features += [Feature.FRAGMENTATION, Feature.PACKETS_1280]
        if kind == DispatchKind.FRAG1:
            _, body = parse_frag_header(rest)
            if not body:
                raise MalformedHeader("first fragment carries no datagram")
            found, expansion = _classify_datagram(body, link_src, link_dst, first_fragment=True)
            features += found
        else:
            parse_frag_header(rest)
    else:
        found, expansion = _classify_datagram(rest, link_src, link_dst, first_fragment=False)
        features += found

    descriptor = _descriptor(features, expansion)
    logger.debug(
        "frame_classified",
        level=int(descriptor.required_level),
        expansion=expansion,
        features=descriptor.features_used.labels(),
    )
    return descriptor


def check_descriptor(descriptor: EncodingDescriptor, supported: FeatureSet, max_expansion: int) -> None:
    """
    Raises:
        UnsupportedFeatureError: lowest-indexed feature missing from `supported`
        ExpansionExceededError: expansion above `max_expansion`
    """
    missing = descriptor.features_used.lowest_missing(supported)
    if missing is not None:
        raise UnsupportedFeatureError(missing)
    if descriptor.decompression_expansion > max_expansion:
        raise ExpansionExceededError(descriptor.decompression_expansion, max_expansion)


def profile_accepts(profile: StackProfile, descriptor: EncodingDescriptor) -> AcceptanceVerdict:
    """Would a stack with `profile` accept a frame described by `descriptor`"""
    missing = descriptor.features_used.lowest_missing(profile.features)
    if missing is not None:
        return AcceptanceVerdict.drop(missing.label, missing)
    limit = profile.effective_limit(get_config().lowpan.limits.spec_max_decompression)
    if descriptor.decompression_expansion > limit:
        return AcceptanceVerdict.drop("DecompressionLimit")
    return AcceptanceVerdict.accept()


# ============================================================================
# Profiles
# ============================================================================

# Rows every stack in the matrix supports
_COMMON = FeatureSet.of(
    Feature.FRAGMENTATION,
    Feature.PACKETS_1280,
    Feature.IPHC_DISPATCH,
    Feature.IPV6_LENGTH_VERSION_ELISION,
    Feature.STATELESS_SRC_DECOMPRESSION,
    Feature.STATELESS_DST_COMPRESSION,
    Feature.STATELESS_MULTICAST,
    Feature.ADDRESS_AUTOCONFIGURATION,
    Feature.STATEFUL_UNICAST,
    Feature.TRAFFIC_CLASS,
    Feature.FLOW_LABEL,
    Feature.HOP_LIMIT,
    Feature.UDP_NHC,
    Feature.UDP_LENGTH_ELISION,
    Feature.UDP_PORTS,
)

CONTIKI_DECOMPRESSION_LIMIT = 38
P6LOWPAN_PROFILE_NAME = "p6lowpan"


def _with(*extra: Feature) -> FeatureSet:
    return _COMMON | FeatureSet.of(*extra)


_TINYOS_FEATURES = _with(
    Feature.UNCOMPRESSED_IPV6,
    Feature.SHORT_LINK_ADDRESS,
    Feature.TUNNELED_IPV6,
    Feature.UDP_CHECKSUM_ELISION,
    Feature.EXTENSION_HEADERS,
    Feature.EXTENSION_PADDING_ELISION,
    Feature.MOBILITY_HEADER,
    Feature.MESH_HEADER,
    Feature.BROADCAST_HEADER,
)

LEGACY_PROFILES: Dict[str, StackProfile] = {
    profile.name.lower(): profile
    for profile in (
        StackProfile(
            name="Contiki",
            features=_with(Feature.UNCOMPRESSED_IPV6),
            decompression_limit=CONTIKI_DECOMPRESSION_LIMIT,
        ),
        StackProfile(
            name="Contiki-NG",
            features=_with(
                Feature.UNCOMPRESSED_IPV6,
                Feature.SHORT_LINK_ADDRESS,
                Feature.EXTENSION_HEADERS,
                Feature.EXTENSION_PADDING_ELISION,
            ),
        ),
        StackProfile(
            name="OpenThread",
            features=_with(
                Feature.SHORT_LINK_ADDRESS,
                Feature.STATEFUL_MULTICAST,
                Feature.TUNNELED_IPV6,
                Feature.EXTENSION_HEADERS,
                Feature.EXTENSION_PADDING_ELISION,
                Feature.MESH_HEADER,
            ),
            regular_nd=False,
        ),
        StackProfile(
            name="Riot",
            features=_with(
                Feature.UNCOMPRESSED_IPV6,
                Feature.SHORT_LINK_ADDRESS,
                Feature.STATEFUL_MULTICAST,
                Feature.COMPRESSION_PAST_FIRST_FRAGMENT,
            ),
            rfc6775_nd=True,
        ),
        StackProfile(
            name="Mbed",
            features=_with(
                Feature.UNCOMPRESSED_IPV6,
                Feature.SHORT_LINK_ADDRESS,
                Feature.STATEFUL_MULTICAST,
                Feature.TUNNELED_IPV6,
                Feature.COMPRESSION_PAST_FIRST_FRAGMENT,
                Feature.EXTENSION_HEADERS,
                Feature.EXTENSION_PADDING_ELISION,
                Feature.MOBILITY_HEADER,
                Feature.MESH_HEADER,
            ),
            rfc6775_nd=True,
        ),
        StackProfile(
            name="TinyOS",
            features=_TINYOS_FEATURES,
            # Parses mesh headers but never originates or forwards them
            send_features=_TINYOS_FEATURES.without(Feature.MESH_HEADER),
            forwards_mesh=False,
        ),
    )
}


def get_profile(name: str) -> StackProfile:
    """Look up a legacy profile by case-insensitive name"""
    try:
        return LEGACY_PROFILES[name.lower()]
    except KeyError:
        known = ", ".join(p.name for p in LEGACY_PROFILES.values())
        raise KeyError(f"unknown stack profile {name!r} (known: {known})") from None


def p6lowpan_profile(capability: CapabilitySet, max_expansion: Optional[int] = None) -> StackProfile:
    """Profile of a P6LoWPAN node: symmetric send/receive, ICMP errors on"""
    if max_expansion is None:
        max_expansion = get_config().lowpan.limits.max_expansion
    return StackProfile(
        name=f"P6LoWPAN {capability}",
        features=capability.feature_set,
        decompression_limit=max_expansion,
        sends_icmp_on_unsupported=True,
        capability=capability,
    )


# ============================================================================
# Feature table
# ============================================================================

def load_feature_table(path: Optional[Path] = None) -> List[Tuple[int, str, int, str]]:
    """
    Read the published feature table

    Returns:
        (index, name, level, provenance) rows in index order

    Raises:
        ConfigError: the table disagrees with the Feature enumeration
    """
    rows: List[Tuple[int, str, int, str]] = []
    for line in (path or FEATURE_TABLE_PATH).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        index, name, level, provenance = (part.strip() for part in line.split("|", 3))
        rows.append((int(index), name, int(level), provenance))

    for index, name, level, _ in rows:
        feature = Feature(index)
        if feature.name != name or int(feature.level) != level:
            raise ConfigError(f"feature table row {index} disagrees with {feature.name}")
    if len(rows) != FEATURE_COUNT:
        raise ConfigError(f"feature table lists {len(rows)} features, expected {FEATURE_COUNT}")
    return rows
