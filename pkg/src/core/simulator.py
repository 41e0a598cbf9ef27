"""
Deterministic discrete-event network simulator

Events sit in a heap ordered by (time, sequence number), so a scenario run
with the same seed always produces the same event log. Loss is the only
source of randomness and draws from a seeded numpy generator.
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, LowpanError
from src.core.node import Abandon, DeliverUp, Drop, Learned, Node, SendFrames, SendOptions
from src.core.templates import build_packet
from src.core.wire import serialize_ipv6
from src.models.capability import Feature, FeatureSet
from src.models.discovery import NeighborSource
from src.models.packet import Ipv6Packet, LinkAddress, LinkFrame
from src.models.simulation import (
    EventKind,
    InteropVerdict,
    Outcome,
    Scenario,
    SimEvent,
    Topology,
    TrafficItem,
)
from src.utils.config import get_config
from src.utils.logger import get_logger, scenario_context

logger = get_logger(__name__)

_FRAGMENTATION = FeatureSet.of(Feature.FRAGMENTATION, Feature.PACKETS_1280)
_UNCOMPRESSED = _FRAGMENTATION.with_feature(Feature.UNCOMPRESSED_IPV6)


def send_options(item: TrafficItem) -> SendOptions:
    """Translate a traffic item's encoding request into node send options"""
    encoding: Optional[FeatureSet] = None
    if item.encoding == "uncompressed":
        encoding = _UNCOMPRESSED
    elif item.encoding != "auto":
        try:
            encoding = FeatureSet.from_names(item.encoding) | _FRAGMENTATION
        except ValueError as e:
            raise ConfigError(str(e)) from e
    return SendOptions(encoding=encoding, mesh=item.mesh, broadcast=item.broadcast)


@dataclass(frozen=True)
class _Transmission:
    frame: LinkFrame
    sender: str
    receiver: str
    datagram: Optional[int]


@dataclass
class SimulationResult:
    scenario: str
    seed: int
    events: List[SimEvent]
    verdicts: List[InteropVerdict]
    node_stats: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def event_lines(self) -> Iterator[str]:
        for event in self.events:
            yield json.dumps(event.to_record(), sort_keys=True)

    def count(self, kind: EventKind, actor: Optional[str] = None) -> int:
        return sum(1 for e in self.events if e.kind == kind and (actor is None or e.actor == actor))


class Simulator:
    """One run over one topology; node state is owned here and nowhere else"""

    def __init__(self, topology: Topology, *, name: str = "scenario", seed: Optional[int] = None):
        settings = get_config().lowpan.simulation
        self.topology = topology
        self.name = name
        self.seed = settings.seed if seed is None else seed
        self.max_ticks = settings.max_ticks
        self.rng = np.random.default_rng(self.seed)
        self.nodes: Dict[str, Node] = {n.id: Node(n) for n in topology.nodes}
        self._by_link: Dict[LinkAddress, str] = {n.link_addr: n.id for n in topology.nodes}
        self._queue: List[Tuple[int, int, str, Any]] = []
        self._order = itertools.count()
        self.events: List[SimEvent] = []
        self._sent: Dict[int, Ipv6Packet] = {}
        self._received: Dict[Tuple[int, str], Ipv6Packet] = {}
        self._install_routes()

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _first_hops(self, source: str) -> Dict[str, str]:
        """Breadth-first next hop from `source` toward every reachable node"""
        first: Dict[str, str] = {}
        frontier = deque()
        for nb in sorted(self.topology.neighbors(source)):
            first[nb] = nb
            frontier.append(nb)
        while frontier:
            current = frontier.popleft()
            for nb in sorted(self.topology.neighbors(current)):
                if nb != source and nb not in first:
                    first[nb] = first[current]
                    frontier.append(nb)
        return first

    def _install_routes(self) -> None:
        for node in self.nodes.values():
            for other in self.topology.nodes:
                if other.id != node.id:
                    node.add_route(other.address, other.link_addr)
            for target, hop in self._first_hops(node.id).items():
                if target != hop:
                    node.next_hops[self.nodes[target].link] = self.nodes[hop].link

    # ------------------------------------------------------------------
    # Event plumbing
    # ------------------------------------------------------------------

    def _schedule(self, time: int, kind: str, payload: Any) -> None:
        heapq.heappush(self._queue, (time, next(self._order), kind, payload))

    def _record(self, time: int, kind: EventKind, actor: str, **fields: Any) -> None:
        self.events.append(SimEvent(time=time, seq=len(self.events), kind=kind, actor=actor, **fields))

    def _transmit(self, sender: str, frames: Sequence[LinkFrame], datagram: Optional[int], now: int) -> None:
        for frame in frames:
            if frame.dst_link.is_broadcast:
                targets = sorted(self.topology.neighbors(sender))
            else:
                target = self._by_link.get(frame.dst_link)
                targets = [target] if target is not None else []
            if not targets:
                self._record(now, EventKind.FRAME_DROPPED, sender, datagram=datagram, reason="NoRoute")
            for target in targets:
                link = self.topology.link(sender, target)
                if link is None:
                    self._record(now, EventKind.FRAME_DROPPED, sender, datagram=datagram, peer=target, reason="NoLink")
                    continue
                if link.loss > 0 and self.rng.random() < link.loss:
                    self._record(now, EventKind.FRAME_DROPPED, sender, datagram=datagram, peer=target, reason="LinkLoss")
                    continue
                self._schedule(now + link.delay, "frame", _Transmission(frame, sender, target, datagram))

    # ------------------------------------------------------------------
    # Handlers
    # ------------------------------------------------------------------

    def _start_nd(self) -> None:
        for node in self.nodes.values():
            if not (node.is_p6lowpan and node.config.nd_enabled):
                continue
            for nb in sorted(self.topology.neighbors(node.id)):
                action = node.solicit(self.nodes[nb].link)
                self._transmit(node.id, action.frames, None, 0)

    def _send(self, now: int, item: TrafficItem, index: int, datagram: int) -> None:
        sender = self.nodes[item.sender]
        receiver = self.nodes[item.receiver]
        packet = build_packet(item, sender.config, receiver.config, index)
        options = send_options(item)
        sender.add_route(packet.dst, receiver.link)
        try:
            frames = sender.send(packet, now, datagram=datagram, options=options)
        except LowpanError as e:
            logger.info("send_failed", node=sender.id, reason=e.reason, detail=str(e))
            self._record(now, EventKind.FRAME_DROPPED, sender.id, datagram=datagram, peer=receiver.id, reason=e.reason)
            return
        self._sent[datagram] = packet
        self._record(
            now, EventKind.DATAGRAM_SENT, sender.id, datagram=datagram, peer=receiver.id,
            detail=f"{len(frames)} frame(s), {packet.wire_length} octets",
        )
        self._transmit(sender.id, frames, datagram, now)

    def _deliver(self, now: int, tx: _Transmission) -> None:
        node = self.nodes[tx.receiver]
        self._record(now, EventKind.FRAME_DELIVERED, node.id, datagram=tx.datagram, peer=tx.sender)
        for action in node.receive(tx.frame, now):
            if isinstance(action, DeliverUp):
                self._on_deliver(now, node, tx, action)
            elif isinstance(action, Drop):
                detail = "icmp" if action.icmp_sent else ""
                self._record(
                    now, EventKind.FRAME_DROPPED, node.id,
                    datagram=tx.datagram, peer=tx.sender, reason=action.reason, detail=detail,
                )
            elif isinstance(action, SendFrames):
                self._on_send_frames(now, node, tx, action)
            elif isinstance(action, Learned):
                if action.source == NeighborSource.ND:
                    peer = self._by_link.get(action.neighbor)
                    self._record(now, EventKind.ND_EXCHANGED, node.id, peer=peer, detail=str(action.capability))
            elif isinstance(action, Abandon):
                self._record(now, EventKind.DATAGRAM_ABANDONED, node.id, datagram=action.datagram, reason=action.reason)

    def _on_deliver(self, now: int, node: Node, tx: _Transmission, action: DeliverUp) -> None:
        self._record(
            now, EventKind.DATAGRAM_RECEIVED, node.id,
            datagram=tx.datagram, peer=self._by_link.get(action.link_src), detail=str(action.packet),
        )
        if tx.datagram is None:
            return
        sent = self._sent.get(tx.datagram)
        if sent is not None and serialize_ipv6(sent) != serialize_ipv6(action.packet):
            logger.warning("payload_mismatch", node=node.id, datagram=tx.datagram)
            return
        self._received[(tx.datagram, node.id)] = action.packet

    def _on_send_frames(self, now: int, node: Node, tx: _Transmission, action: SendFrames) -> None:
        if action.purpose == "icmp":
            self._record(
                now, EventKind.ICMP_ERROR_SENT, node.id,
                datagram=tx.datagram, peer=tx.sender, reason=action.reason,
            )
            self._transmit(node.id, action.frames, None, now)
        elif action.purpose == "forward":
            self._record(now, EventKind.FRAME_FORWARDED, node.id, datagram=tx.datagram, peer=tx.sender)
            self._transmit(node.id, action.frames, tx.datagram, now)
        elif action.purpose == "retransmit":
            self._record(now, EventKind.DATAGRAM_SENT, node.id, datagram=action.datagram, detail="retransmission")
            self._transmit(node.id, action.frames, action.datagram, now)
        else:
            self._transmit(node.id, action.frames, None, now)

    # ------------------------------------------------------------------
    # Run
    # ------------------------------------------------------------------

    def run(self, traffic: Sequence[TrafficItem]) -> SimulationResult:
        for item in traffic:
            for endpoint in (item.sender, item.receiver):
                if endpoint not in self.nodes:
                    raise ConfigError(f"traffic names unknown node {endpoint!r}")

        with scenario_context(self.name, seed=self.seed):
            ids = itertools.count(1)
            item_ids: List[List[int]] = []
            for item in traffic:
                own: List[int] = []
                for k in range(item.count):
                    datagram = next(ids)
                    own.append(datagram)
                    self._schedule(item.time + k * item.interval, "send", (item, k, datagram))
                item_ids.append(own)

            self._start_nd()
            while self._queue:
                time, _, kind, payload = heapq.heappop(self._queue)
                if time > self.max_ticks:
                    logger.warning("simulation_truncated", max_ticks=self.max_ticks)
                    break
                if kind == "send":
                    self._send(time, *payload)
                else:
                    self._deliver(time, payload)

            verdicts = [self._verdict(item, own) for item, own in zip(traffic, item_ids)]
            logger.debug("scenario_finished", events=len(self.events), verdicts=len(verdicts))

        return SimulationResult(
            scenario=self.name,
            seed=self.seed,
            events=self.events,
            verdicts=verdicts,
            node_stats={node_id: dict(node.stats) for node_id, node in self.nodes.items()},
        )

    def _verdict(self, item: TrafficItem, ids: List[int]) -> InteropVerdict:
        wanted = set(ids)
        mine = [e for e in self.events if e.datagram in wanted]
        delivered = sum(1 for d in ids if (d, item.receiver) in self._received)
        errors = [e for e in mine if e.kind == EventKind.ICMP_ERROR_SENT]
        drops = [e.reason for e in mine if e.kind == EventKind.FRAME_DROPPED and e.reason != "Discarded"]

        reason: Optional[str] = None
        if delivered == len(ids):
            outcome = Outcome.ERRORED_THEN_DELIVERED if errors else Outcome.DELIVERED
        elif errors:
            outcome = Outcome.ERRORED_THEN_ABANDONED
            reason = errors[0].reason
        else:
            outcome = Outcome.SILENT_DROP
            reason = drops[0] if drops else "NotDelivered"

        return InteropVerdict(
            scenario=self.name,
            sender=item.sender,
            receiver=item.receiver,
            sender_profile=self.nodes[item.sender].profile.name,
            receiver_profile=self.nodes[item.receiver].profile.name,
            outcome=outcome,
            reason=reason,
            errors=len(errors),
            delivered=delivered,
            datagrams=len(ids),
        )


def run_scenario(
    topology: Topology,
    traffic: Sequence[TrafficItem],
    *,
    name: str = "scenario",
    seed: Optional[int] = None,
) -> SimulationResult:
    """Simulate `traffic` over `topology` and judge every traffic item"""
    return Simulator(topology, name=name, seed=seed).run(traffic)


def simulate(scenario: Scenario, seed: Optional[int] = None) -> SimulationResult:
    return run_scenario(
        scenario.topology,
        scenario.traffic,
        name=scenario.name,
        seed=scenario.seed if seed is None else seed,
    )
