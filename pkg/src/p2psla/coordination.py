"""Overlay messages, the message bus, and the virtual session contract protocol.

Trace format: one JSON object per line with keys ``round``, ``variant``,
``src``, ``dst``, ``destination`` (null for reports and advertisements) and
``dropped``, written in send order.
"""

from __future__ import annotations

import enum
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .model import DeviceId, DestinationId, MeasurementSample, SessionBudget


@dataclass(frozen=True)
class Message:
    src: DeviceId
    dst: DeviceId
    round: int

    variant = "Message"

    @property
    def destination(self) -> Optional[DestinationId]:
        return None


@dataclass(frozen=True)
class MeasurementReport(Message):
    samples: Tuple[MeasurementSample, ...] = ()

    variant = "MeasurementReport"


@dataclass(frozen=True)
class PeerAdvertisement(Message):
    peers: Tuple[DeviceId, ...] = ()

    variant = "PeerAdvertisement"


@dataclass(frozen=True)
class _AboutDestination(Message):
    target: DestinationId = -1

    @property
    def destination(self) -> DestinationId:
        return self.target


@dataclass(frozen=True)
class CoordRequest(_AboutDestination):
    variant = "CoordRequest"


@dataclass(frozen=True)
class CoordResponse(_AboutDestination):
    positive: bool = False

    variant = "CoordResponse"


@dataclass(frozen=True)
class StopRequest(_AboutDestination):
    """Consumer asks the producer to stop measuring on its behalf."""

    variant = "StopRequest"


@dataclass(frozen=True)
class StopInform(_AboutDestination):
    """Producer tells the consumer it no longer serves the destination."""

    variant = "StopInform"


def trace_line(msg: Message, dropped: bool = False) -> str:
    return json.dumps(
        {
            "round": msg.round,
            "variant": msg.variant,
            "src": msg.src,
            "dst": msg.dst,
            "destination": msg.destination,
            "dropped": dropped,
        },
        separators=(",", ":"),
    )


class MessageBus:
    """Lossless (or seeded-lossy) bus with one round of latency."""

    def __init__(
        self,
        drop_probability: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        trace: Optional[IO[str]] = None,
    ):
        if not 0.0 <= drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")
        if drop_probability > 0.0 and rng is None:
            raise ValueError("a seeded generator is required when messages may be dropped")
        self.drop_probability = drop_probability
        self.rng = rng
        self.trace = trace
        self.sent: Counter = Counter()
        self.dropped = 0
        self._pending: List[Tuple[int, Message]] = []
        self._seq = 0

    def send(self, msg: Message) -> None:
        self.sent[msg.variant] += 1
        dropped = bool(self.drop_probability) and self.rng.random() < self.drop_probability
        if self.trace is not None:
            self.trace.write(trace_line(msg, dropped) + "\n")
        if dropped:
            self.dropped += 1
            return
        self._pending.append((self._seq, msg))
        self._seq += 1

    def deliver(self, round: int) -> Dict[DeviceId, List[Message]]:
        """Hand out every message sent before ``round``, ordered by (src, dst, send order)."""
        due = [(seq, m) for seq, m in self._pending if m.round < round]
        self._pending = [(seq, m) for seq, m in self._pending if m.round >= round]
        due.sort(key=lambda sm: (sm[1].src, sm[1].dst, sm[0]))
        inboxes: Dict[DeviceId, List[Message]] = defaultdict(list)
        for _, m in due:
            inboxes[m.dst].append(m)
        return dict(inboxes)


class SessionState(enum.Enum):
    PROPOSED = "proposed"
    ACTIVE = "active"
    STOPPED = "stopped"


@dataclass
class VirtualSession:
    consumer: DeviceId
    producer: DeviceId
    destination: DestinationId
    state: SessionState
    established_round: int

    def __post_init__(self):
        if self.consumer == self.producer:
            raise ValueError("a device cannot hold a virtual session with itself")


@dataclass
class Coordinator:
    """Both sides of the virtual-session contract for one device.

    Sessions the device consumes are keyed by destination (at most one per
    destination); sessions it produces are keyed by (consumer, destination).
    Proposed and active consumed sessions both count against ``virtual_max``.
    """

    owner: DeviceId
    budget: SessionBudget
    proposal_timeout: int = 3
    consuming: Dict[DestinationId, VirtualSession] = field(default_factory=dict)
    producing: Dict[Tuple[DeviceId, DestinationId], VirtualSession] = field(default_factory=dict)
    declined: Dict[DestinationId, Set[DeviceId]] = field(default_factory=dict)
    established: int = 0

    # -- consumer side ---------------------------------------------------

    def open_sessions(self) -> int:
        return len(self.consuming)

    def active_destinations(self) -> Set[DestinationId]:
        return {d for d, s in self.consuming.items() if s.state is SessionState.ACTIVE}

    def producer_for(self, destination: DestinationId) -> Optional[DeviceId]:
        s = self.consuming.get(destination)
        if s is None or s.state is not SessionState.ACTIVE:
            return None
        return s.producer

    def propose(
        self,
        destination: DestinationId,
        ranked_peers: Sequence[DeviceId],
        round: int,
    ) -> Optional[CoordRequest]:
        """Ask the best-correlated peer that has not declined this destination."""
        if self.open_sessions() >= self.budget.virtual_max or destination in self.consuming:
            return None
        refused = self.declined.get(destination, set())
        for peer in ranked_peers:
            if peer == self.owner or peer in refused:
                continue
            self.consuming[destination] = VirtualSession(
                self.owner, peer, destination, SessionState.PROPOSED, round
            )
            return CoordRequest(self.owner, peer, round, target=destination)
        return None

    def handle_response(self, resp: CoordResponse, round: int) -> Optional[StopRequest]:
        s = self.consuming.get(resp.target)
        pending = s is not None and s.producer == resp.src and s.state is SessionState.PROPOSED
        if not pending:
            # late answer to an expired proposal: release the producer
            if resp.positive:
                return StopRequest(self.owner, resp.src, round, target=resp.target)
            return None
        if resp.positive:
            s.state = SessionState.ACTIVE
            s.established_round = round
            self.established += 1
        else:
            s.state = SessionState.STOPPED
            del self.consuming[resp.target]
            self.declined.setdefault(resp.target, set()).add(resp.src)
        return None

    def expire_proposals(self, round: int) -> None:
        for d in sorted(self.consuming):
            s = self.consuming[d]
            if s.state is SessionState.PROPOSED and round - s.established_round > self.proposal_timeout:
                s.state = SessionState.STOPPED
                del self.consuming[d]
                self.declined.setdefault(d, set()).add(s.producer)

    def stop_consuming(self, destination: DestinationId, round: int) -> Optional[StopRequest]:
        s = self.consuming.pop(destination, None)
        if s is None:
            return None
        s.state = SessionState.STOPPED
        return StopRequest(self.owner, s.producer, round, target=destination)

    def reset_declined(self) -> None:
        self.declined.clear()

    # -- producer side ---------------------------------------------------

    def obligated_destinations(self) -> Set[DestinationId]:
        return {d for (_, d) in self.producing}

    def consumers(self) -> Set[DeviceId]:
        return {c for (c, _) in self.producing}

    def handle_request(
        self,
        req: CoordRequest,
        is_peer: bool,
        can_measure: bool,
        round: int,
    ) -> CoordResponse:
        """Accept when the destination is already contracted or a local slot is free.

        A device never produces a destination it consumes. Crossing proposals
        for the same destination would then refuse each other forever, so a
        still-pending proposal yields to a request from a lower device id.
        """
        d = req.target
        obligated = self.obligated_destinations()
        own = self.consuming.get(d)
        yielding = own is not None and own.state is SessionState.PROPOSED and req.src < self.owner
        positive = (
            is_peer
            and can_measure
            and (own is None or yielding)
            and (d in obligated or len(obligated) < self.budget.local_max)
        )
        if positive and yielding:
            # any late positive answer to the withdrawn proposal is released by handle_response
            self.consuming.pop(d).state = SessionState.STOPPED
        if positive:
            self.producing[(req.src, d)] = VirtualSession(
                req.src, self.owner, d, SessionState.ACTIVE, round
            )
        return CoordResponse(self.owner, req.src, round, target=d, positive=positive)

    # -- both sides ------------------------------------------------------

    def handle_stop(self, msg: Message) -> None:
        """Apply a StopRequest or StopInform; unknown sessions are ignored."""
        if isinstance(msg, StopRequest):
            s = self.producing.pop((msg.src, msg.target), None)
        elif isinstance(msg, StopInform):
            s = self.consuming.get(msg.target)
            if s is None or s.producer != msg.src:
                return
            del self.consuming[msg.target]
        else:
            raise TypeError(f"not a stop message: {msg!r}")
        if s is not None:
            s.state = SessionState.STOPPED

    def drop_peer(self, peer: DeviceId, round: int) -> List[Message]:
        """Tear down every session shared with ``peer``."""
        out: List[Message] = []
        for d in sorted(self.consuming):
            if self.consuming[d].producer == peer:
                out.append(self.stop_consuming(d, round))
        for key in sorted(self.producing):
            if key[0] == peer:
                self.producing.pop(key).state = SessionState.STOPPED
                out.append(StopInform(self.owner, peer, round, target=key[1]))
        return out


def propose_virtual(coordinator: Coordinator, destination: DestinationId,
                    ranked_peers: Sequence[DeviceId], round: int) -> Optional[CoordRequest]:
    return coordinator.propose(destination, ranked_peers, round)


def handle_coord_request(coordinator: Coordinator, req: CoordRequest, is_peer: bool,
                         can_measure: bool, round: int) -> CoordResponse:
    return coordinator.handle_request(req, is_peer, can_measure, round)


def handle_stop(coordinator: Coordinator, msg: Message) -> None:
    coordinator.handle_stop(msg)
