"""
Capability models: the 26 feature flags, linear levels, FLEX bitfields,
legacy stack profiles and encoding descriptors
"""

from __future__ import annotations

from enum import Enum, IntEnum
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ============================================================================
# Features
# ============================================================================

class Feature(IntEnum):
    """
    6LoWPAN features as stable bit indices

    Index order follows the capability spectrum, so every level's additions
    occupy a contiguous index range.
    """
    UNCOMPRESSED_IPV6 = 0
    FRAGMENTATION = 1
    PACKETS_1280 = 2
    STATELESS_SRC_DECOMPRESSION = 3
    IPHC_DISPATCH = 4
    IPV6_LENGTH_VERSION_ELISION = 5
    STATELESS_DST_COMPRESSION = 6
    STATELESS_MULTICAST = 7
    SHORT_LINK_ADDRESS = 8
    ADDRESS_AUTOCONFIGURATION = 9
    STATEFUL_UNICAST = 10
    STATEFUL_MULTICAST = 11
    TRAFFIC_CLASS = 12
    FLOW_LABEL = 13
    HOP_LIMIT = 14
    TUNNELED_IPV6 = 15
    UDP_NHC = 16
    UDP_LENGTH_ELISION = 17
    UDP_PORTS = 18
    COMPRESSION_PAST_FIRST_FRAGMENT = 19
    MESH_HEADER = 20
    BROADCAST_HEADER = 21
    EXTENSION_HEADERS = 22
    EXTENSION_PADDING_ELISION = 23
    MOBILITY_HEADER = 24
    UDP_CHECKSUM_ELISION = 25

    @property
    def label(self) -> str:
        """CamelCase name used in drop reasons, e.g. UncompressedIpv6"""
        return "".join(part.capitalize() for part in self.name.split("_"))

    @property
    def level(self) -> "CapabilityLevel":
        return _FEATURE_LEVEL[self]

    @classmethod
    def from_name(cls, name: str) -> "Feature":
        """Accept UPPER_SNAKE, lower_snake or CamelCase labels"""
        key = name.strip()
        if key.upper() in cls.__members__:
            return cls[key.upper()]
        for feature in cls:
            if feature.label.lower() == key.lower():
                return feature
        raise ValueError(f"unknown feature {name!r}")


FEATURE_COUNT = len(Feature)
ALL_FEATURE_BITS = (1 << FEATURE_COUNT) - 1


class CapabilityLevel(IntEnum):
    """Position on the linear capability spectrum; stored in 3 bits"""
    LEVEL_0 = 0
    LEVEL_1 = 1
    LEVEL_2 = 2
    LEVEL_3 = 3
    LEVEL_4 = 4
    LEVEL_5 = 5


LINEAR_STATE_BITS = 3
FLEX_STATE_BITS = 32


# Level whose "Added Features" list introduces each feature
_LEVEL_RANGES: Dict[int, Tuple[int, int]] = {
    0: (0, 4),
    1: (4, 10),
    2: (10, 12),
    3: (12, 15),
    4: (15, 20),
    5: (20, 26),
}

_FEATURE_LEVEL: Dict[Feature, CapabilityLevel] = {
    Feature(i): CapabilityLevel(level)
    for level, (lo, hi) in _LEVEL_RANGES.items()
    for i in range(lo, hi)
}

# Features that are meaningless without others; used to close FLEX sets
FEATURE_PREREQUISITES: Dict[Feature, FrozenSet[Feature]] = {
    Feature.PACKETS_1280: frozenset({Feature.FRAGMENTATION}),
    Feature.IPHC_DISPATCH: frozenset({Feature.IPV6_LENGTH_VERSION_ELISION}),
    Feature.IPV6_LENGTH_VERSION_ELISION: frozenset({Feature.IPHC_DISPATCH}),
    Feature.STATELESS_DST_COMPRESSION: frozenset({Feature.IPHC_DISPATCH}),
    Feature.STATELESS_MULTICAST: frozenset({Feature.IPHC_DISPATCH}),
    Feature.SHORT_LINK_ADDRESS: frozenset({Feature.IPHC_DISPATCH}),
    Feature.ADDRESS_AUTOCONFIGURATION: frozenset({Feature.IPHC_DISPATCH}),
    Feature.STATEFUL_UNICAST: frozenset({Feature.IPHC_DISPATCH}),
    Feature.STATEFUL_MULTICAST: frozenset({Feature.IPHC_DISPATCH}),
    Feature.TRAFFIC_CLASS: frozenset({Feature.IPHC_DISPATCH}),
    Feature.FLOW_LABEL: frozenset({Feature.IPHC_DISPATCH}),
    Feature.HOP_LIMIT: frozenset({Feature.IPHC_DISPATCH}),
    Feature.TUNNELED_IPV6: frozenset({Feature.IPHC_DISPATCH}),
    Feature.UDP_NHC: frozenset({Feature.IPHC_DISPATCH, Feature.UDP_LENGTH_ELISION}),
    Feature.UDP_LENGTH_ELISION: frozenset({Feature.UDP_NHC}),
    Feature.UDP_PORTS: frozenset({Feature.UDP_NHC}),
    Feature.UDP_CHECKSUM_ELISION: frozenset({Feature.UDP_NHC}),
    Feature.COMPRESSION_PAST_FIRST_FRAGMENT: frozenset({Feature.IPHC_DISPATCH, Feature.FRAGMENTATION}),
    Feature.EXTENSION_HEADERS: frozenset({Feature.IPHC_DISPATCH}),
    Feature.EXTENSION_PADDING_ELISION: frozenset({Feature.EXTENSION_HEADERS}),
    Feature.MOBILITY_HEADER: frozenset({Feature.IPHC_DISPATCH}),
}


class FeatureSet(BaseModel):
    """32-bit bitfield over Feature indices (bit i = 1 << i)"""
    model_config = ConfigDict(frozen=True)

    bits: int = Field(default=0, ge=0)

    @field_validator("bits")
    @classmethod
    def _defined_bits_only(cls, v: int) -> int:
        if v & ~ALL_FEATURE_BITS:
            raise ValueError(f"undefined feature bits set: {v & ~ALL_FEATURE_BITS:#x}")
        return v

    @classmethod
    def _raw(cls, bits: int) -> "FeatureSet":
        return cls.model_construct(bits=bits & ALL_FEATURE_BITS)

    @classmethod
    def of(cls, *features: Feature) -> "FeatureSet":
        bits = 0
        for feature in features:
            bits |= 1 << int(feature)
        return cls._raw(bits)

    @classmethod
    def from_iterable(cls, features: Iterable[Feature]) -> "FeatureSet":
        return cls.of(*features)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "FeatureSet":
        return cls.of(*(Feature.from_name(n) for n in names))

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls._raw(0)

    @classmethod
    def universe(cls) -> "FeatureSet":
        return cls._raw(ALL_FEATURE_BITS)

    def __contains__(self, feature: object) -> bool:
        return isinstance(feature, int) and bool(self.bits >> int(feature) & 1)

    def members(self) -> List[Feature]:
        return [f for f in Feature if self.bits >> int(f) & 1]

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __and__(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet._raw(self.bits & other.bits)

    def __or__(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet._raw(self.bits | other.bits)

    def __sub__(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet._raw(self.bits & ~other.bits)

    def with_feature(self, feature: Feature) -> "FeatureSet":
        return FeatureSet._raw(self.bits | 1 << int(feature))

    def without(self, *features: Feature) -> "FeatureSet":
        bits = self.bits
        for feature in features:
            bits &= ~(1 << int(feature))
        return FeatureSet._raw(bits)

    def issubset(self, other: "FeatureSet") -> bool:
        return self.bits & ~other.bits == 0

    def lowest_missing(self, supported: "FeatureSet") -> Optional[Feature]:
        """Lowest-indexed feature of this set absent from `supported`"""
        missing = self.bits & ~supported.bits
        if not missing:
            return None
        return Feature((missing & -missing).bit_length() - 1)

    def labels(self) -> List[str]:
        return [f.label for f in self.members()]

    def __str__(self) -> str:
        return "{" + ", ".join(self.labels()) + "}"

    def __repr__(self) -> str:
        return f"FeatureSet({self.bits:#09x})"


# ============================================================================
# Capability sets
# ============================================================================

class CapabilityMode(str, Enum):
    """How a node advertises its capabilities"""
    LINEAR = "linear"
    FLEX = "flex"


class CapabilitySet(BaseModel):
    """Either a linear level or an arbitrary FLEX feature set"""
    model_config = ConfigDict(frozen=True)

    mode: CapabilityMode
    level: Optional[CapabilityLevel] = None
    features: Optional[FeatureSet] = None

    @model_validator(mode="after")
    def _one_variant(self):
        if self.mode == CapabilityMode.LINEAR and (self.level is None or self.features is not None):
            raise ValueError("linear capability needs a level and no feature set")
        if self.mode == CapabilityMode.FLEX and (self.features is None or self.level is not None):
            raise ValueError("flex capability needs a feature set and no level")
        return self

    @classmethod
    def linear(cls, level: int) -> "CapabilitySet":
        return cls(mode=CapabilityMode.LINEAR, level=CapabilityLevel(level))

    @classmethod
    def flex(cls, features: FeatureSet) -> "CapabilitySet":
        return cls(mode=CapabilityMode.FLEX, features=features)

    @property
    def is_linear(self) -> bool:
        return self.mode == CapabilityMode.LINEAR

    @property
    def feature_set(self) -> FeatureSet:
        if self.is_linear:
            return level_feature_set(self.level)
        return self.features

    def equivalent(self, other: "CapabilitySet") -> bool:
        """Semantic equality: Linear(L) equals Flex(features_of_level(L))"""
        return self.feature_set.bits == other.feature_set.bits

    def __str__(self) -> str:
        if self.is_linear:
            return f"Linear({int(self.level)})"
        return f"Flex({self.features.bits:#010x})"


def level_feature_set(level: int) -> FeatureSet:
    """Cumulative features of levels 0..level"""
    _, hi = _LEVEL_RANGES[int(level)]
    return FeatureSet._raw((1 << hi) - 1)


# ============================================================================
# Descriptors and profiles
# ============================================================================

class EncodingDescriptor(BaseModel):
    """Which features a wire frame exercises and how far it expands"""
    model_config = ConfigDict(frozen=True)

    features_used: FeatureSet
    required_level: CapabilityLevel
    decompression_expansion: int

    def __str__(self) -> str:
        return (
            f"level {int(self.required_level)}, expansion {self.decompression_expansion}, "
            f"features {self.features_used}"
        )


UNLIMITED: Optional[int] = None


class StackProfile(BaseModel):
    """
    Receive/send behaviour of one stack

    Legacy profiles reproduce one column of the interoperability matrix;
    P6LoWPAN profiles carry the node's advertised capability.
    """
    model_config = ConfigDict(frozen=True)

    name: str
    features: FeatureSet
    send_features: Optional[FeatureSet] = None
    decompression_limit: Optional[int] = Field(default=UNLIMITED, ge=0)
    sends_icmp_on_unsupported: bool = False
    forwards_mesh: bool = True
    regular_nd: bool = True
    rfc6775_nd: bool = False
    capability: Optional[CapabilitySet] = None

    @property
    def is_p6lowpan(self) -> bool:
        return self.capability is not None

    @property
    def sending(self) -> FeatureSet:
        return self.send_features if self.send_features is not None else self.features

    def effective_limit(self, spec_max: int) -> int:
        if self.decompression_limit is None:
            return spec_max
        return min(self.decompression_limit, spec_max)


class AcceptanceVerdict(BaseModel):
    """Outcome of checking a descriptor against a profile"""
    model_config = ConfigDict(frozen=True)

    accepted: bool
    reason: Optional[str] = None
    missing: Optional[Feature] = None

    @classmethod
    def accept(cls) -> "AcceptanceVerdict":
        return cls(accepted=True)

    @classmethod
    def drop(cls, reason: str, missing: Optional[Feature] = None) -> "AcceptanceVerdict":
        return cls(accepted=False, reason=reason, missing=missing)

    def __str__(self) -> str:
        return "Accept" if self.accepted else f"Drop({self.reason})"
