"""
Simulator models: node configurations, topologies, traffic, events and
interoperability verdicts
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.capability import StackProfile
from src.models.codec import EMPTY_CONTEXTS, ContextTable, DecompressionLimits
from src.models.packet import Ipv6Address, LinkAddress


class NodeConfig(BaseModel):
    """One simulated node: a legacy stack profile or a P6LoWPAN capability"""
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    link_addr: LinkAddress
    profile: StackProfile
    contexts: ContextTable = EMPTY_CONTEXTS
    limits: DecompressionLimits = Field(default_factory=DecompressionLimits)
    nd_enabled: bool = False

    @model_validator(mode="after")
    def _symmetric_p6lowpan(self):
        profile = self.profile
        if profile.is_p6lowpan and profile.send_features is not None and profile.send_features != profile.features:
            raise ValueError(f"P6LoWPAN node {self.id} must send what it receives")
        return self

    @property
    def is_p6lowpan(self) -> bool:
        return self.profile.is_p6lowpan

    @property
    def address(self) -> Ipv6Address:
        return self.link_addr.link_local_address()


class Link(BaseModel):
    """Undirected link with a fixed delay and a per-frame loss rate"""
    model_config = ConfigDict(frozen=True)

    a: str
    b: str
    delay: int = Field(default=1, ge=0)
    loss: float = Field(default=0.0, ge=0.0, le=1.0)

    @property
    def key(self) -> Tuple[str, str]:
        return tuple(sorted((self.a, self.b)))


class Topology(BaseModel):
    model_config = ConfigDict(frozen=True)

    nodes: List[NodeConfig]
    links: List[Link] = Field(default_factory=list)

    @model_validator(mode="after")
    def _simple_graph(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        addrs = [n.link_addr for n in self.nodes]
        if len(set(addrs)) != len(addrs):
            raise ValueError("link addresses must be unique")
        seen = set()
        for link in self.links:
            if link.a == link.b:
                raise ValueError(f"self-loop on {link.a}")
            if link.a not in ids or link.b not in ids:
                raise ValueError(f"link {link.a}-{link.b} names an unknown node")
            if link.key in seen:
                raise ValueError(f"duplicate link {link.a}-{link.b}")
            seen.add(link.key)
        return self

    def node(self, node_id: str) -> NodeConfig:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def neighbors(self, node_id: str) -> List[str]:
        out = []
        for link in self.links:
            if link.a == node_id:
                out.append(link.b)
            elif link.b == node_id:
                out.append(link.a)
        return out

    def link(self, a: str, b: str) -> Optional[Link]:
        key = tuple(sorted((a, b)))
        for link in self.links:
            if link.key == key:
                return link
        return None


class TrafficItem(BaseModel):
    """
    Datagrams one node sends another

    `encoding` is "auto", "uncompressed" or a list of feature names the
    sender restricts itself to.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    time: int = Field(default=0, ge=0)
    sender: str = Field(alias="from")
    receiver: str = Field(alias="to")
    template: str = "udp"
    dst_address: Optional[str] = None
    extensions: Tuple[str, ...] = ()
    payload_size: int = Field(default=10, ge=0, le=1200)
    hop_limit: int = Field(default=63, ge=0, le=255)
    src_port: int = Field(default=5683, ge=0, le=0xFFFF)
    dst_port: int = Field(default=5683, ge=0, le=0xFFFF)
    global_prefix: Optional[str] = None
    encoding: Any = "auto"
    mesh: bool = False
    broadcast: bool = False
    count: int = Field(default=1, ge=1)
    interval: int = Field(default=10, ge=0)

    @field_validator("encoding")
    @classmethod
    def _encoding_form(cls, v: Any) -> Any:
        if isinstance(v, str) and v in ("auto", "uncompressed"):
            return v
        if isinstance(v, (list, tuple)) and all(isinstance(x, str) for x in v):
            return tuple(v)
        raise ValueError("encoding must be 'auto', 'uncompressed' or a list of feature names")


class Outcome(str, Enum):
    DELIVERED = "Delivered"
    SILENT_DROP = "SilentDrop"
    ERRORED_THEN_DELIVERED = "ErroredThenDelivered"
    ERRORED_THEN_ABANDONED = "ErroredThenAbandoned"


class Expectation(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    sender: str = Field(alias="from")
    receiver: str = Field(alias="to")
    outcome: Outcome
    reason: Optional[str] = None
    errors: Optional[int] = Field(default=None, ge=0)


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    description: str = ""
    seed: Optional[int] = None
    topology: Topology
    traffic: List[TrafficItem] = Field(default_factory=list)
    expectations: List[Expectation] = Field(default_factory=list)


class EventKind(str, Enum):
    DATAGRAM_SENT = "DatagramSent"
    FRAME_DELIVERED = "FrameDelivered"
    FRAME_DROPPED = "FrameDropped"
    FRAME_FORWARDED = "FrameForwarded"
    ICMP_ERROR_SENT = "IcmpErrorSent"
    ND_EXCHANGED = "NdExchanged"
    DATAGRAM_RECEIVED = "DatagramReceived"
    DATAGRAM_ABANDONED = "DatagramAbandoned"


class SimEvent(BaseModel):
    """One line of the event log; ordered by (time, seq)"""
    model_config = ConfigDict(frozen=True)

    time: int
    seq: int
    kind: EventKind
    actor: str
    detail: str = ""
    datagram: Optional[int] = None
    peer: Optional[str] = None
    reason: Optional[str] = None

    def to_record(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)


class InteropVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario: str
    sender: str
    receiver: str
    sender_profile: str
    receiver_profile: str
    outcome: Outcome
    reason: Optional[str] = None
    errors: int = 0
    delivered: int = 0
    datagrams: int = 0

    @property
    def failed(self) -> bool:
        return self.outcome in (Outcome.SILENT_DROP, Outcome.ERRORED_THEN_ABANDONED)

    def __str__(self) -> str:
        if self.outcome == Outcome.SILENT_DROP:
            return f"SilentDrop({self.reason})"
        return self.outcome.value
