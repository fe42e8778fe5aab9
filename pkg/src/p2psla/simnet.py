"""Deterministic round-based world: paths, shared violation regimes, ground
truth, and the simulation loop that scores a strategy against it.

Every random quantity is drawn from a stream keyed by the run seed and the
entity it belongs to (regime group, path), never from a shared stream, so the
world is the same whatever sessions the strategies activate.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import IO, TYPE_CHECKING, Dict, Hashable, List, Mapping, Optional, Tuple

import numpy as np

from .coordination import MessageBus
from .model import DeviceId, DestinationId, MeasurementSample, Origin, Slo
from .strategies import Agent, DeviceContext, StrategyKind, VirtualAgent, make_agent

if TYPE_CHECKING:
    from .harness.config import ScenarioConfig

_REGIME_TAG = 1
_NOISE_TAG = 2
_BUS_TAG = 3


class BudgetExceeded(RuntimeError):
    """A strategy asked for more sessions than its budget allows."""


@dataclass(frozen=True)
class GroupModel:
    """Regime-switching violation process shared by all paths in a group.

    With ``per_destination`` set, each destination reached through the group
    gets its own independent copy of the process.
    """

    id: str
    p_enter: float
    p_exit: float
    offset: float
    noise_sd: float = 0.0
    initial: str = "normal"
    per_destination: bool = False

    def __post_init__(self):
        for name in ("p_enter", "p_exit"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.initial not in ("normal", "violating", "stationary"):
            raise ValueError(f"initial must be normal, violating or stationary, got {self.initial!r}")

    def process_key(self, destination: DestinationId) -> Tuple[str, int]:
        return (self.id, destination if self.per_destination else -1)


@dataclass(frozen=True)
class PathModel:
    source: DeviceId
    destination: DestinationId
    base_latency: float
    group: str

    def __post_init__(self):
        if not self.base_latency > 0:
            raise ValueError("base_latency must be positive")


def _key_entropy(key: Tuple[str, int]) -> List[int]:
    return [zlib.crc32(key[0].encode("utf-8")), key[1] + 1]


def regime_series(group: GroupModel, destination: DestinationId, rounds: int, seed: int) -> np.ndarray:
    """Boolean Violating/Normal trajectory of one process over ``rounds``."""
    rng = np.random.default_rng([seed, _REGIME_TAG] + _key_entropy(group.process_key(destination)))
    u = rng.random(rounds + 1)
    if group.initial == "violating":
        state = True
    elif group.initial == "normal":
        state = False
    else:
        total = group.p_enter + group.p_exit
        state = bool(u[0] < (group.p_enter / total if total > 0 else 0.0))
    out = np.empty(rounds, dtype=bool)
    for r in range(rounds):
        if r > 0:
            if state:
                state = not (u[r] < group.p_exit)
            else:
                state = bool(u[r] < group.p_enter)
        out[r] = state
    return out


def path_noise(path: PathModel, sd: float, rounds: int, seed: int) -> np.ndarray:
    if sd == 0.0:
        return np.zeros(rounds)
    rng = np.random.default_rng([seed, _NOISE_TAG, path.source, path.destination])
    return rng.normal(0.0, sd, rounds)


class World:
    """Ground-truth latency of every path at every round."""

    def __init__(
        self,
        slo: Slo,
        groups: Mapping[str, GroupModel],
        paths: Mapping[Tuple[DeviceId, DestinationId], PathModel],
        rounds: int,
        seed: int,
    ):
        self.slo = slo
        self.rounds = rounds
        self.seed = seed
        self.paths = dict(paths)
        regimes: Dict[Hashable, np.ndarray] = {}
        self.regime: Dict[Tuple[DeviceId, DestinationId], np.ndarray] = {}
        self.values: Dict[Tuple[DeviceId, DestinationId], np.ndarray] = {}
        for pair in sorted(self.paths):
            path = self.paths[pair]
            group = groups[path.group]
            key = group.process_key(path.destination)
            if key not in regimes:
                regimes[key] = regime_series(group, path.destination, rounds, seed)
            self.regime[pair] = regimes[key]
            noise = path_noise(path, group.noise_sd, rounds, seed)
            self.values[pair] = path.base_latency + group.offset * regimes[key] + noise
        self.truth = {pair: np.array([slo.breached(v) for v in vals]) for pair, vals in self.values.items()}

    def value(self, source: DeviceId, destination: DestinationId, round: int) -> float:
        return float(self.values[(source, destination)][round])

    def violating(self, source: DeviceId, destination: DestinationId, round: int) -> bool:
        return bool(self.truth[(source, destination)][round])


def sample_measurement(world: World, source: DeviceId, destination: DestinationId, round: int) -> MeasurementSample:
    """Result of a real session on (source, destination) in ``round``."""
    return MeasurementSample(source, destination, round, world.value(source, destination, round))


def detect(sample: MeasurementSample, slo: Slo) -> bool:
    return slo.breached(sample.value)


@dataclass
class MetricsReport:
    strategy: str
    seed: int
    rounds: int
    devices: int
    total_violations: int
    true_detections: int
    missed_violations: int
    false_virtual_detections: int
    false_virtual_negatives: int
    detection_ratio: float
    violation_episodes: int
    detected_episodes: int
    mean_detection_lag: float
    real_sessions_per_device_per_round: float
    covered_destinations_per_device_per_round: float
    distinct_destinations_covered_per_device: float
    virtual_sessions_established: int
    global_session_bound: int
    messages_total: int
    messages_dropped: int
    msg_measurement_report: int
    msg_peer_advertisement: int
    msg_coord_request: int
    msg_coord_response: int
    msg_stop_request: int
    msg_stop_inform: int

    def to_row(self) -> Dict[str, object]:
        return asdict(self)


COLUMNS = tuple(MetricsReport.__dataclass_fields__)


@dataclass
class RunResult:
    report: MetricsReport
    # one record per (round, device): activation set and active virtual destinations
    activations: List[dict] = field(default_factory=list)
    topology: List[dict] = field(default_factory=list)


def build_agents(scenario: "ScenarioConfig", strategy: StrategyKind, seed: int) -> Dict[DeviceId, Agent]:
    agents = {}
    for dev in scenario.devices:
        if not dev.destinations:
            continue
        ctx = DeviceContext(
            device=dev.id,
            destinations=tuple(dev.destinations),
            neighbors=tuple(dev.neighbors),
            slo=scenario.slo,
            rank=scenario.rank,
            overlay=scenario.overlay,
            budget=scenario.budget,
        )
        agents[dev.id] = make_agent(strategy, ctx, seed)
    return agents


def _episode_lags(truth: np.ndarray, detected: np.ndarray) -> List[Tuple[bool, int]]:
    """(detected?, lag) per maximal violating run; undetected runs report their length."""
    out = []
    r = 0
    n = truth.size
    while r < n:
        if not truth[r]:
            r += 1
            continue
        start = r
        while r < n and truth[r]:
            r += 1
        hits = np.flatnonzero(detected[start:r])
        if hits.size:
            out.append((True, int(hits[0])))
        else:
            out.append((False, r - start))
    return out


def run(
    scenario: "ScenarioConfig",
    strategy: StrategyKind,
    seed: int,
    trace: Optional[IO[str]] = None,
) -> RunResult:
    """Simulate one (scenario, strategy, seed) and score it against ground truth.

    Per round: deliver last round's messages, let every device decide in id
    order, run the real sessions, hand results back to the devices.
    """
    rounds = scenario.rounds
    world = World(scenario.slo, scenario.groups, scenario.paths, rounds, seed)
    agents = build_agents(scenario, strategy, seed)
    bus_rng = np.random.default_rng([seed, _BUS_TAG]) if scenario.message_drop > 0 else None
    bus = MessageBus(scenario.message_drop, bus_rng, trace)

    # result flags per (device, destination): [has_result, breached, virtual_false_pos, virtual_false_neg]
    pairs = [(a, d) for a in sorted(agents) for d in sorted(agents[a].ctx.destinations)]
    has_result = {p: np.zeros(rounds, dtype=bool) for p in pairs}
    detected = {p: np.zeros(rounds, dtype=bool) for p in pairs}
    false_pos = 0
    false_neg = 0
    sessions = 0
    activations: List[dict] = []

    def score(sample: MeasurementSample) -> None:
        nonlocal false_pos, false_neg
        pair = (sample.source, sample.destination)
        r = sample.round
        breached = detect(sample, world.slo)
        truth = world.violating(pair[0], pair[1], r)
        has_result[pair][r] = True
        if breached and truth:
            detected[pair][r] = True
        if sample.origin is Origin.VIRTUAL:
            if breached and not truth:
                false_pos += 1
            elif truth and not breached:
                false_neg += 1

    for r in range(rounds):
        inboxes = bus.deliver(r)
        decided = {}
        for dev_id in sorted(agents):
            agent = agents[dev_id]
            result, out = agent.decide(r, inboxes.get(dev_id, ()))
            decided[dev_id] = result
            for s in result.adopted:
                score(s)
            for msg in out:
                if msg.dst in agents:
                    bus.send(msg)
        for dev_id in sorted(agents):
            agent = agents[dev_id]
            activation = decided[dev_id].activation
            if len(activation) > scenario.budget.local_max:
                raise BudgetExceeded(f"device {dev_id} exceeded its local budget in round {r}")
            samples = [sample_measurement(world, dev_id, d, r) for d in activation]
            sessions += len(samples)
            for s in samples:
                score(s)
            for msg in agent.record(r, samples):
                if msg.dst in agents:
                    bus.send(msg)
            virtual = []
            if isinstance(agent, VirtualAgent):
                virtual = sorted(agent.coordinator.active_destinations())
                if len(virtual) > scenario.budget.virtual_max:
                    raise BudgetExceeded(f"device {dev_id} exceeded its virtual budget in round {r}")
            activations.append(
                {"round": r, "device": dev_id, "activation": list(activation), "virtual": virtual}
            )

    total = true = 0
    episodes: List[Tuple[bool, int]] = []
    for p in pairs:
        truth = world.truth[p]
        total += int(truth.sum())
        true += int((truth & detected[p]).sum())
        episodes.extend(_episode_lags(truth, detected[p]))

    n_dev = len(agents)
    device_rounds = n_dev * rounds
    covered_per_round = sum(int(h.sum()) for h in has_result.values())
    distinct = sum(int(has_result[p].any()) for p in pairs)
    established = sum(
        a.coordinator.established for a in agents.values() if isinstance(a, VirtualAgent)
    )
    sent = bus.sent
    report = MetricsReport(
        strategy=strategy.value,
        seed=seed,
        rounds=rounds,
        devices=n_dev,
        total_violations=total,
        true_detections=true,
        missed_violations=total - true,
        false_virtual_detections=false_pos,
        false_virtual_negatives=false_neg,
        detection_ratio=true / total if total else math.nan,
        violation_episodes=len(episodes),
        detected_episodes=sum(1 for hit, _ in episodes if hit),
        mean_detection_lag=(sum(lag for _, lag in episodes) / len(episodes)) if episodes else math.nan,
        real_sessions_per_device_per_round=sessions / device_rounds,
        covered_destinations_per_device_per_round=covered_per_round / device_rounds,
        distinct_destinations_covered_per_device=distinct / n_dev,
        virtual_sessions_established=established,
        global_session_bound=scenario.budget.local_max * n_dev,
        messages_total=sum(sent.values()),
        messages_dropped=bus.dropped,
        msg_measurement_report=sent["MeasurementReport"],
        msg_peer_advertisement=sent["PeerAdvertisement"],
        msg_coord_request=sent["CoordRequest"],
        msg_coord_response=sent["CoordResponse"],
        msg_stop_request=sent["StopRequest"],
        msg_stop_inform=sent["StopInform"],
    )
    topology: List[dict] = []
    for dev_id in sorted(agents):
        topology.extend(getattr(agents[dev_id], "topology_log", []))
    topology.sort(key=lambda t: (t["round"], t["device"]))
    return RunResult(report, activations, topology)
