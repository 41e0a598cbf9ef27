"""
Node state machine

A node owns its neighbour table, reassembly pool and routing tables. The
send path compresses for the next hop's negotiated capability; the receive
path turns every outcome, including failures, into actions for the
simulator to carry out.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from src.core.capability import check_descriptor, classify, features_of_level, negotiate, profile_accepts
from src.core.discovery import (
    ALL_NODES,
    NdMessage,
    NeighborTable,
    build_class_unsupported,
    build_router_advertisement,
    build_router_solicitation,
    handle_class_unsupported,
    parse_class_unsupported,
    parse_nd_message,
)
from src.core.errors import (
    CannotRepresent,
    ExpansionExceededError,
    LowpanError,
    NoRoute,
    NoSourceAddress,
    UnsupportedFeatureError,
)
from src.core.fragmentation import FeedStatus, ReassemblyPool, fragment
from src.core.headers import (
    DispatchKind,
    dispatch_kind,
    encode_broadcast_header,
    encode_mesh_header,
    parse_mesh_broadcast,
)
from src.core.iphc import compress, decompress, source_address_of
from src.models.capability import CapabilitySet, Feature, FeatureSet
from src.models.codec import BroadcastHeader, DecompressionLimits, MeshHeader
from src.models.discovery import NeighborSource
from src.models.packet import BROADCAST_LINK, Icmpv6, Ipv6Address, Ipv6Packet, LinkAddress, LinkFrame
from src.models.simulation import NodeConfig
from src.utils.config import get_config
from src.utils.logger import get_logger

logger = get_logger(__name__)


# ============================================================================
# Actions
# ============================================================================

@dataclass(frozen=True)
class DeliverUp:
    packet: Ipv6Packet
    link_src: LinkAddress


@dataclass(frozen=True)
class SendFrames:
    """
    Frames to put on the air

    purpose is one of "icmp", "nd", "forward" or "retransmit".
    """
    frames: Tuple[LinkFrame, ...]
    purpose: str
    datagram: Optional[int] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class Drop:
    reason: str
    missing: Optional[Feature] = None
    icmp_sent: bool = False


@dataclass(frozen=True)
class Learned:
    neighbor: LinkAddress
    capability: CapabilitySet
    source: NeighborSource


@dataclass(frozen=True)
class Abandon:
    datagram: int
    reason: str


Action = Union[DeliverUp, SendFrames, Drop, Learned, Abandon]


@dataclass(frozen=True)
class SendOptions:
    encoding: Optional[FeatureSet] = None
    mesh: bool = False
    broadcast: bool = False


@dataclass
class PendingDatagram:
    """A sent datagram kept until an error about it can no longer arrive"""
    datagram: int
    packet: Ipv6Packet
    final: LinkAddress
    next_hop: LinkAddress
    options: SendOptions
    first_payload: bytes
    attempts: int = 0


# ============================================================================
# Node
# ============================================================================

class Node:
    """One simulated 6LoWPAN stack"""

    def __init__(self, config: NodeConfig):
        settings = get_config().lowpan
        self.config = config
        self.profile = config.profile
        self.link = config.link_addr
        self.address = config.address
        self.mtu_payload = settings.link.mtu_payload
        self.mac_overhead = settings.link.mac_overhead
        self.spec_max = settings.limits.spec_max_decompression
        self.mesh_hops = settings.simulation.mesh_hops
        self.max_pending = settings.simulation.max_pending
        self.max_retransmissions = settings.simulation.max_retransmissions
        self.icmp_type = settings.discovery.icmp_type

        self.table = NeighborTable()
        self.pool = ReassemblyPool(
            config.contexts, self.profile.features, self.receive_limits, mtu_payload=self.mtu_payload
        )
        self.routes: Dict[bytes, LinkAddress] = {}
        self.next_hops: Dict[LinkAddress, LinkAddress] = {}
        self.pending: "OrderedDict[int, PendingDatagram]" = OrderedDict()
        self.stats = {"frames_sent": 0, "bytes_on_air": 0, "icmp_sent": 0, "drops": 0}
        self._tag = 0
        self._sequence = 0

    @property
    def id(self) -> str:
        return self.config.id

    @property
    def is_p6lowpan(self) -> bool:
        return self.profile.is_p6lowpan

    @property
    def capability(self) -> Optional[CapabilitySet]:
        return self.profile.capability

    @property
    def receive_limits(self) -> DecompressionLimits:
        if self.is_p6lowpan:
            return self.config.limits
        return DecompressionLimits(
            max_expansion=self.profile.effective_limit(self.spec_max),
            max_tunnel_depth=self.config.limits.max_tunnel_depth,
        )

    def add_route(self, address: Ipv6Address, final: LinkAddress) -> None:
        self.routes[address.value] = final

    def resolve(self, address: Ipv6Address) -> LinkAddress:
        try:
            return self.routes[address.value]
        except KeyError:
            raise NoRoute(f"{self.id} has no route to {address}") from None

    # ------------------------------------------------------------------
    # Send path
    # ------------------------------------------------------------------

    def sending_policy(
        self,
        next_hop: LinkAddress,
        now: int = 0,
        encoding: Optional[FeatureSet] = None,
    ) -> Tuple[FeatureSet, DecompressionLimits, bool]:
        """(allowed features, limits to respect, compress tunneled headers)"""
        if self.is_p6lowpan:
            learned = self.table.lookup(next_hop, now).capability
            capability = negotiate(self.capability, learned) if learned is not None else self.capability
            allowed, limits, inner = capability.feature_set, self.config.limits, False
        else:
            allowed = self.profile.sending
            limits = DecompressionLimits(
                max_expansion=self.spec_max, max_tunnel_depth=self.config.limits.max_tunnel_depth
            )
            inner = Feature.TUNNELED_IPV6 in allowed
        if encoding is not None:
            allowed = allowed & encoding
        return allowed, limits, inner

    def _next_tag(self) -> int:
        self._tag = (self._tag + 1) & 0xFFFF
        return self._tag

    def _encode(
        self,
        packet: Ipv6Packet,
        final: LinkAddress,
        next_hop: LinkAddress,
        now: int,
        options: SendOptions,
    ) -> Tuple[List[LinkFrame], bytes]:
        allowed, limits, inner = self.sending_policy(next_hop, now, options.encoding)
        prefix = b""
        derive_dst = next_hop
        if options.mesh:
            if Feature.MESH_HEADER not in allowed:
                raise CannotRepresent(f"{self.id} cannot originate mesh headers")
            prefix += encode_mesh_header(MeshHeader(hops_left=self.mesh_hops, originator=self.link, final=final))
            derive_dst = final
        if options.broadcast:
            if Feature.BROADCAST_HEADER not in allowed:
                raise CannotRepresent(f"{self.id} cannot originate broadcast headers")
            self._sequence = (self._sequence + 1) & 0xFF
            prefix += encode_broadcast_header(BroadcastHeader(sequence=self._sequence))
            if not options.mesh:
                derive_dst = BROADCAST_LINK

        mtu = self.mtu_payload - len(prefix)
        compressed = compress(
            packet, self.config.contexts, allowed, limits,
            link_src=self.link, link_dst=derive_dst, compress_inner=inner, mtu_payload=mtu,
        )
        payloads = fragment(compressed, compressed.uncompressed_size, mtu, self._next_tag())
        dst_link = BROADCAST_LINK if options.broadcast else next_hop
        frames = [self._frame(dst_link, prefix + p) for p in payloads]
        return frames, payloads[0]

    def _frame(self, dst_link: LinkAddress, payload: bytes) -> LinkFrame:
        frame = LinkFrame(src_link=self.link, dst_link=dst_link, payload=payload, mac_overhead=self.mac_overhead)
        self.stats["frames_sent"] += 1
        self.stats["bytes_on_air"] += frame.on_air_length
        return frame

    def send(
        self,
        packet: Ipv6Packet,
        now: int = 0,
        *,
        datagram: Optional[int] = None,
        options: SendOptions = SendOptions(),
    ) -> List[LinkFrame]:
        """
        Frames carrying `packet` to its resolved destination

        Raises:
            NoRoute: destination not in the routing table
            CannotRepresent: nothing the next hop accepts carries the packet
        """
        final = self.resolve(packet.dst)
        next_hop = self.next_hops.get(final, final)
        frames, first = self._encode(packet, final, next_hop, now, options)
        if datagram is not None and self.is_p6lowpan:
            self.pending[datagram] = PendingDatagram(datagram, packet, final, next_hop, options, first)
            while len(self.pending) > self.max_pending:
                self.pending.popitem(last=False)
        logger.debug("datagram_sent", node=self.id, frames=len(frames), octets=packet.wire_length)
        return frames

    def _control_frames(self, packet: Ipv6Packet, neighbor: LinkAddress) -> Tuple[LinkFrame, ...]:
        """ICMP errors and ND messages go out with the Level 0 encoding"""
        compressed = compress(
            packet, self.config.contexts, features_of_level(0), self.config.limits,
            link_src=self.link, link_dst=neighbor,
        )
        payloads = fragment(compressed, compressed.uncompressed_size, self.mtu_payload, self._next_tag())
        return tuple(self._frame(neighbor, p) for p in payloads)

    def solicit(self, neighbor: LinkAddress) -> SendFrames:
        """Router Solicitation advertising this node's capability"""
        rs = build_router_solicitation(self.address, self.capability)
        return SendFrames(self._control_frames(rs, neighbor), "nd")

    # ------------------------------------------------------------------
    # Receive path
    # ------------------------------------------------------------------

    def receive(self, frame: LinkFrame, now: int = 0) -> List[Action]:
        payload = frame.payload
        try:
            mesh, _, rest = parse_mesh_broadcast(payload)
        except LowpanError as e:
            return [self._drop(e.reason)]
        origin, final = frame.src_link, frame.dst_link
        if mesh is not None:
            if Feature.MESH_HEADER not in self.profile.features:
                return self._reject(rest, mesh.originator, UnsupportedFeatureError(Feature.MESH_HEADER))
            origin, final = mesh.originator, mesh.final
            if mesh.final != self.link:
                return self._forward(frame, mesh)

        try:
            descriptor = classify(payload, link_src=frame.src_link, link_dst=frame.dst_link)
        except LowpanError as e:
            return [self._drop(e.reason)]
        if self.is_p6lowpan:
            try:
                check_descriptor(descriptor, self.profile.features, self.receive_limits.max_expansion)
            except (UnsupportedFeatureError, ExpansionExceededError) as e:
                return self._reject(rest, origin, e)
        else:
            verdict = profile_accepts(self.profile, descriptor)
            if not verdict.accepted:
                return [self._drop(verdict.reason, verdict.missing)]

        if dispatch_kind(rest[0]) in (DispatchKind.FRAG1, DispatchKind.FRAGN):
            result = self.pool.feed(rest, origin, final, now)
            if result.status == FeedStatus.INCOMPLETE:
                return []
            if result.status == FeedStatus.DISCARDED:
                return [self._drop("Discarded")]
            if result.status == FeedStatus.ERROR:
                if result.missing is not None:
                    return self._reject(rest, origin, UnsupportedFeatureError(result.missing))
                if result.reason == ExpansionExceededError.reason:
                    limit = self.receive_limits.max_expansion
                    return self._reject(rest, origin, ExpansionExceededError(limit + 1, limit))
                return [self._drop(result.reason)]
            packet = result.packet
        else:
            try:
                packet = decompress(rest, self.config.contexts, self.profile.features, self.receive_limits, origin, final)
            except (UnsupportedFeatureError, ExpansionExceededError) as e:
                return self._reject(rest, origin, e)
            except LowpanError as e:
                return [self._drop(e.reason)]
        return self._handle_packet(packet, origin, now)

    def _drop(self, reason: str, missing: Optional[Feature] = None, icmp_sent: bool = False) -> Drop:
        self.stats["drops"] += 1
        logger.info("frame_dropped", node=self.id, reason=reason, icmp=icmp_sent)
        return Drop(reason, missing, icmp_sent)

    def _reject(self, rest: bytes, origin: LinkAddress, error: LowpanError) -> List[Action]:
        """Drop a frame we cannot handle, reporting it when the profile does"""
        missing = getattr(error, "feature", None)
        if not self.profile.sends_icmp_on_unsupported:
            return [self._drop(error.reason, missing)]
        try:
            dst = source_address_of(rest, self.config.contexts, origin)
        except NoSourceAddress as e:
            logger.info("icmp_suppressed", node=self.id, reason=error.reason, detail=str(e))
            return [self._drop(error.reason, missing)]
        icmp = build_class_unsupported(self.capability, rest, src=self.address, dst=dst)
        frames = self._control_frames(icmp, origin)
        self.stats["icmp_sent"] += 1
        return [self._drop(error.reason, missing, icmp_sent=True), SendFrames(frames, "icmp", reason=error.reason)]

    def _forward(self, frame: LinkFrame, mesh: MeshHeader) -> List[Action]:
        if not self.profile.forwards_mesh:
            return [self._drop("MeshForwarding")]
        if mesh.hops_left <= 1:
            return [self._drop("HopsExhausted")]
        next_hop = self.next_hops.get(mesh.final)
        if next_hop is None and mesh.final in self.routes.values():
            next_hop = mesh.final
        if next_hop is None:
            return [self._drop(NoRoute.reason)]
        header = encode_mesh_header(mesh.model_copy(update={"hops_left": mesh.hops_left - 1}))
        payload = header + frame.payload[mesh.wire_length:]
        return [SendFrames((self._frame(next_hop, payload),), "forward")]

    def _handle_packet(self, packet: Ipv6Packet, origin: LinkAddress, now: int) -> List[Action]:
        transport = packet.transport
        if isinstance(transport, Icmpv6):
            if transport.icmp_type == self.icmp_type:
                # Legacy stacks do not know the message and discard it
                if not self.is_p6lowpan:
                    return []
                return self._on_class_unsupported(transport.data, origin, now)
            try:
                nd = parse_nd_message(packet)
            except LowpanError as e:
                return [self._drop(e.reason)]
            if nd is not None:
                return self._on_nd(packet, nd, origin, now)
        return [DeliverUp(packet, origin)]

    def _on_class_unsupported(self, data: bytes, origin: LinkAddress, now: int) -> List[Action]:
        try:
            msg = parse_class_unsupported(data)
        except LowpanError as e:
            return [self._drop(e.reason)]
        handle_class_unsupported(self.table, msg, origin, now)
        actions: List[Action] = [Learned(origin, msg.my_capability, NeighborSource.ICMP)]

        pending = self._match_pending(msg.offending_prefix)
        if pending is None:
            return actions
        if pending.attempts >= self.max_retransmissions:
            del self.pending[pending.datagram]
            logger.info("datagram_abandoned", node=self.id, datagram=pending.datagram)
            return actions + [Abandon(pending.datagram, "RetransmissionFailed")]
        pending.attempts += 1
        try:
            frames, first = self._encode(pending.packet, pending.final, pending.next_hop, now, pending.options)
        except LowpanError as e:
            del self.pending[pending.datagram]
            return actions + [Abandon(pending.datagram, e.reason)]
        pending.first_payload = first
        return actions + [SendFrames(tuple(frames), "retransmit", pending.datagram)]

    def _match_pending(self, prefix: bytes) -> Optional[PendingDatagram]:
        if not prefix:
            return None
        for entry in reversed(self.pending.values()):
            if entry.first_payload[:len(prefix)] == prefix:
                return entry
        return None

    def _on_nd(self, packet: Ipv6Packet, nd: NdMessage, origin: LinkAddress, now: int) -> List[Action]:
        if nd.contexts and not self.profile.rfc6775_nd:
            return [self._drop("Rfc6775Nd")]
        if not self.profile.regular_nd:
            return [self._drop("RegularNd")]
        actions: List[Action] = []
        if nd.capability is not None and self.is_p6lowpan and self.config.nd_enabled:
            self.table.update(origin, nd.capability, NeighborSource.ND, now)
            actions.append(Learned(origin, nd.capability, NeighborSource.ND))
            if nd.is_solicitation:
                ra = build_router_advertisement(self.address, self.capability, dst=ALL_NODES)
                actions.append(SendFrames(self._control_frames(ra, origin), "nd"))
        actions.append(DeliverUp(packet, origin))
        return actions

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.profile.name}, {self.link})"
