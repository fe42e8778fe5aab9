"""Per-device activation strategies.

Each strategy extends the previous one: ``LocalAgent`` ranks on its own
results, ``LocalRemoteAgent`` adds the correlated-peer overlay and pools
peers' results into the proximity score, ``VirtualAgent`` adds virtual
measurement sessions contracted with peers. ``RandomAgent`` is the baseline.

A device step has two halves. ``decide`` consumes the inbox and returns the
activation set; the simulator then runs the sessions and hands the fresh
samples to ``record``, which returns the reports to send.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .coordination import (
    Coordinator,
    CoordRequest,
    CoordResponse,
    MeasurementReport,
    Message,
    PeerAdvertisement,
    StopInform,
    StopRequest,
)
from .correlation import Overlay, OverlayParams
from .model import (
    DeviceId,
    DestinationId,
    MeasurementHistory,
    MeasurementSample,
    Origin,
    SessionBudget,
    Slo,
)
from .rank import ActivationSet, Ranking, RankParams, rank_destinations


class StrategyKind(enum.Enum):
    RANDOM = "random"
    LOCAL = "local"
    LOCAL_REMOTE = "local_remote"
    VIRTUAL = "virtual"


@dataclass(frozen=True)
class DeviceContext:
    device: DeviceId
    destinations: Tuple[DestinationId, ...]
    neighbors: Tuple[DeviceId, ...]
    slo: Slo
    rank: RankParams
    overlay: OverlayParams
    budget: SessionBudget


@dataclass
class StepResult:
    activation: ActivationSet
    # virtual samples adopted during this step, as the consumer's own results
    adopted: List[MeasurementSample] = field(default_factory=list)
    ranking: Optional[Ranking] = None


class Agent:
    kind: StrategyKind

    def __init__(self, ctx: DeviceContext, seed: int = 0):
        if not ctx.destinations:
            raise ValueError(f"device {ctx.device} has no destinations")
        self.ctx = ctx
        self.seed = seed
        self.history = MeasurementHistory(ctx.rank.window)

    @property
    def id(self) -> DeviceId:
        return self.ctx.device

    def decide(self, round: int, inbox: Sequence[Message] = ()) -> Tuple[StepResult, List[Message]]:
        raise NotImplementedError

    def record(self, round: int, samples: Sequence[MeasurementSample]) -> List[Message]:
        for s in samples:
            self.history.append(s)
        return []


class RandomAgent(Agent):
    kind = StrategyKind.RANDOM

    def __init__(self, ctx: DeviceContext, seed: int = 0):
        super().__init__(ctx, seed)
        self.rng = random.Random(f"random-baseline:{seed}:{ctx.device}")

    def decide(self, round, inbox=()):
        dests = sorted(self.ctx.destinations)
        k = min(self.ctx.budget.local_max, len(dests))
        return StepResult(tuple(sorted(self.rng.sample(dests, k)))), []


class LocalAgent(Agent):
    kind = StrategyKind.LOCAL

    def available(self) -> List[DestinationId]:
        return sorted(self.ctx.destinations)

    def forced(self) -> List[DestinationId]:
        return []

    def proximity_view(self, destinations) -> Dict[DestinationId, List[MeasurementSample]]:
        return {d: self.history.samples(d) for d in destinations}

    def staleness_view(self, destinations) -> Dict[DestinationId, Optional[int]]:
        return {d: self.history.last_result(d) for d in destinations}

    def rank(self, round: int) -> Ranking:
        dests = self.available()
        forced = self.forced()
        if not dests:
            return Ranking((), tuple(sorted(forced)))
        return rank_destinations(
            dests,
            self.proximity_view(dests),
            self.staleness_view(dests),
            self.ctx.slo,
            round,
            self.ctx.rank,
            self.ctx.budget,
            forced,
        )

    def decide(self, round, inbox=()):
        ranking = self.rank(round)
        return StepResult(ranking.activation, ranking=ranking), []


class LocalRemoteAgent(LocalAgent):
    """Local ranking plus an overlay of correlated peers.

    Peers' reported results join the proximity score; staleness still
    counts only this device's own sessions.
    """

    kind = StrategyKind.LOCAL_REMOTE

    def __init__(self, ctx: DeviceContext, seed: int = 0):
        super().__init__(ctx, seed)
        self.overlay = Overlay(ctx.device, tuple(ctx.neighbors), ctx.overlay)
        self.reports: Dict[DeviceId, MeasurementHistory] = {}
        self.topology_log: List[dict] = []

    def _store_report(self, msg: MeasurementReport) -> None:
        hist = self.reports.get(msg.src)
        if hist is None:
            hist = self.reports[msg.src] = MeasurementHistory(self.ctx.rank.window)
        for s in msg.samples:
            hist.append(s.as_origin(Origin.REMOTE, msg.src, self.id))
        self.overlay.note_reporter(msg.src)

    def handle(self, msg: Message, round: int, out: List[Message], result: StepResult) -> None:
        if isinstance(msg, MeasurementReport):
            self._store_report(msg)
        elif isinstance(msg, PeerAdvertisement):
            self.overlay.note_advertisement(msg.peers)

    def topology_due(self, round: int) -> bool:
        return round > 0 and round % self.ctx.overlay.topology_period == 0

    def update_topology(self, round: int, out: List[Message]) -> None:
        added, dropped = self.overlay.update(round, self.history, self.reports)
        self.topology_log.append(
            {
                "round": round,
                "device": self.id,
                "scores": {str(k): v for k, v in self.overlay.last_scores.items()},
                "peers": sorted(self.overlay.peers),
            }
        )
        self.on_peers_changed(round, added, dropped, out)
        advert = tuple(sorted(self.overlay.peers))
        for p in advert:
            out.append(PeerAdvertisement(self.id, p, round, peers=advert))

    def on_peers_changed(self, round, added, dropped, out) -> None:
        pass

    def proximity_view(self, destinations):
        view = super().proximity_view(destinations)
        for p in sorted(self.overlay.peers):
            hist = self.reports.get(p)
            if hist is None:
                continue
            for d in destinations:
                if self.skip_remote(p, d):
                    continue
                view[d].extend(hist.samples(d))
        return view

    def skip_remote(self, peer: DeviceId, destination: DestinationId) -> bool:
        return False

    def decide(self, round, inbox=()):
        out: List[Message] = []
        result = StepResult(())
        for msg in inbox:
            self.handle(msg, round, out, result)
        self.before_topology(round, out)
        if self.topology_due(round):
            self.update_topology(round, out)
        ranking = self.rank(round)
        result.activation = ranking.activation
        result.ranking = ranking
        self.after_rank(round, ranking, out)
        return result, out

    def before_topology(self, round, out) -> None:
        pass

    def after_rank(self, round, ranking, out) -> None:
        pass

    def report_recipients(self, round: int) -> List[DeviceId]:
        return sorted(set(self.overlay.candidates(round)) | set(self.overlay.peers))

    def record(self, round, samples):
        super().record(round, samples)
        if not samples:
            return []
        payload = tuple(samples)
        return [MeasurementReport(self.id, r, round, samples=payload) for r in self.report_recipients(round)]


class VirtualAgent(LocalRemoteAgent):
    """Adds virtual sessions: destinations cut by the budget are contracted
    to correlated peers, and contracted destinations are forced into the
    producer's own activation set.

    Virtual results count as this device's own results for detection and
    staleness. They are never forwarded onward.
    """

    kind = StrategyKind.VIRTUAL

    def __init__(self, ctx: DeviceContext, seed: int = 0):
        super().__init__(ctx, seed)
        self.coordinator = Coordinator(ctx.device, ctx.budget)

    def handle(self, msg, round, out, result):
        if isinstance(msg, MeasurementReport):
            self._store_report(msg)
            for s in msg.samples:
                if self.coordinator.producer_for(s.destination) == msg.src:
                    adopted = s.as_origin(Origin.VIRTUAL, msg.src, self.id)
                    self.history.append(adopted)
                    result.adopted.append(adopted)
        elif isinstance(msg, CoordRequest):
            out.append(
                self.coordinator.handle_request(
                    msg,
                    is_peer=msg.src in self.overlay.peers,
                    can_measure=msg.target in self.ctx.destinations,
                    round=round,
                )
            )
        elif isinstance(msg, CoordResponse):
            stop = self.coordinator.handle_response(msg, round)
            if stop is not None:
                out.append(stop)
        elif isinstance(msg, (StopRequest, StopInform)):
            self.coordinator.handle_stop(msg)
        else:
            super().handle(msg, round, out, result)

    def before_topology(self, round, out):
        self.coordinator.expire_proposals(round)

    def on_peers_changed(self, round, added, dropped, out):
        for p in sorted(dropped):
            out.extend(self.coordinator.drop_peer(p, round))
        self.coordinator.reset_declined()

    def skip_remote(self, peer, destination):
        # already adopted into the own history
        return self.coordinator.producer_for(destination) == peer

    def staleness_view(self, destinations):
        return {d: self.history.last_result(d, include_virtual=True) for d in destinations}

    def available(self):
        return sorted(set(self.ctx.destinations) - set(self.coordinator.consuming))

    def forced(self):
        return sorted(self.coordinator.obligated_destinations())

    def peers_measuring(self, destination: DestinationId) -> List[DeviceId]:
        return [
            link.peer
            for link in self.overlay.ranked_peers()
            if link.peer in self.reports and self.reports[link.peer].samples(destination)
        ]

    def after_rank(self, round, ranking, out):
        if self.ctx.budget.virtual_max == 0:
            return
        chosen = set(ranking.activation)
        obligated = self.coordinator.obligated_destinations()
        for d in ranking.order:
            if self.coordinator.open_sessions() >= self.ctx.budget.virtual_max:
                break
            if d in chosen or d in obligated:
                continue
            req = self.coordinator.propose(d, self.peers_measuring(d), round)
            if req is not None:
                out.append(req)

    def report_recipients(self, round):
        return sorted(set(super().report_recipients(round)) | self.coordinator.consumers())


AGENTS = {
    StrategyKind.RANDOM: RandomAgent,
    StrategyKind.LOCAL: LocalAgent,
    StrategyKind.LOCAL_REMOTE: LocalRemoteAgent,
    StrategyKind.VIRTUAL: VirtualAgent,
}


def make_agent(kind: StrategyKind, ctx: DeviceContext, seed: int = 0) -> Agent:
    return AGENTS[kind](ctx, seed)
