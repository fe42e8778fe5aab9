"""Correlated-peer evaluation and overlay maintenance."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .model import DeviceId, DestinationId, MeasurementHistory


class UndefinedCorrelation(ValueError):
    """Raised when a series has zero variance."""


class InsufficientData(ValueError):
    """Raised when too few round-aligned pairs exist."""


class Method(enum.Enum):
    PEARSON = "pearson"
    SPEARMAN = "spearman"


@dataclass(frozen=True)
class OverlayParams:
    min_correlation: float = 0.7
    max_peers: int = 4
    min_shared_samples: int = 5
    method: Method = Method.PEARSON
    topology_period: int = 10

    def __post_init__(self):
        if not 0.0 < self.min_correlation <= 1.0:
            raise ValueError("min_correlation must be in (0, 1]")
        if self.max_peers < 1:
            raise ValueError("max_peers must be >= 1")
        if self.min_shared_samples < 3:
            raise ValueError("min_shared_samples must be >= 3")
        if self.topology_period < 1:
            raise ValueError("topology_period must be >= 1")


@dataclass(frozen=True)
class PeerLink:
    peer: DeviceId
    correlation: float
    shared_destinations: int
    established_round: int


def _as_pair(xs: Sequence[float], ys: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("series must be one-dimensional and of equal length")
    if x.size < 2:
        raise ValueError("need at least two paired values")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = _as_pair(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("correlation undefined for a constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size, dtype=float)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = _as_pair(xs, ys)
    return pearson(average_ranks(x), average_ranks(y))


CORRELATORS: Dict[Method, Callable[[Sequence[float], Sequence[float]], float]] = {
    Method.PEARSON: pearson,
    Method.SPEARMAN: spearman,
}


def align_series(
    local: MeasurementHistory,
    remote: MeasurementHistory,
    destination: DestinationId,
    min_pairs: int = 1,
) -> Tuple[List[float], List[float], List[int]]:
    """Pair local and remote locally-produced samples taken in the same round."""
    mine = {s.round: s.value for s in local.local_samples(destination)}
    theirs = {s.round: s.value for s in remote.samples(destination)}
    rounds = sorted(mine.keys() & theirs.keys())
    if len(rounds) < min_pairs:
        raise InsufficientData(
            f"{len(rounds)} aligned pairs for destination {destination}, need {min_pairs}"
        )
    return [mine[r] for r in rounds], [theirs[r] for r in rounds], rounds


def evaluate_candidate(
    local: MeasurementHistory,
    remote: MeasurementHistory,
    params: OverlayParams,
) -> Optional[Tuple[float, int]]:
    """Sample-count weighted mean correlation over shared destinations.

    Returns ``(score, qualifying_destinations)`` or None when no shared
    destination has enough aligned, non-constant data.
    """
    corr = CORRELATORS[params.method]
    weighted = []
    for d in sorted(set(local.destinations()) & set(remote.destinations())):
        try:
            xs, ys, _ = align_series(local, remote, d, params.min_shared_samples)
            weighted.append((corr(xs, ys), len(xs)))
        except (InsufficientData, UndefinedCorrelation):
            continue
    return weighted_score(weighted)


def weighted_score(per_destination: Sequence[Tuple[float, int]]) -> Optional[Tuple[float, int]]:
    if not per_destination:
        return None
    n = sum(w for _, w in per_destination)
    return sum(r * w for r, w in per_destination) / n, len(per_destination)


def select_peers(scores: Mapping[DeviceId, float], params: OverlayParams) -> List[Tuple[DeviceId, float]]:
    kept = [(p, s) for p, s in scores.items() if s >= params.min_correlation]
    kept.sort(key=lambda ps: (-ps[1], ps[0]))
    return kept[:params.max_peers]


@dataclass
class Overlay:
    """One device's view of the measurement overlay."""

    owner: DeviceId
    neighbors: Tuple[DeviceId, ...]
    params: OverlayParams
    peers: Dict[DeviceId, PeerLink] = field(default_factory=dict)
    advertised: Set[DeviceId] = field(default_factory=set)
    reporters: Set[DeviceId] = field(default_factory=set)
    last_scores: Dict[DeviceId, float] = field(default_factory=dict)

    def candidates(self, round: int) -> List[DeviceId]:
        if round == 0:
            pool = set(self.neighbors)
        else:
            pool = set(self.neighbors) | self.advertised | self.reporters | set(self.peers)
        pool.discard(self.owner)
        return sorted(pool)

    def note_advertisement(self, peer_ids: Iterable[DeviceId]) -> None:
        self.advertised.update(p for p in peer_ids if p != self.owner)

    def note_reporter(self, device: DeviceId) -> None:
        if device != self.owner:
            self.reporters.add(device)

    def ranked_peers(self) -> List[PeerLink]:
        return sorted(self.peers.values(), key=lambda l: (-l.correlation, l.peer))

    def update(
        self,
        round: int,
        local: MeasurementHistory,
        reports: Mapping[DeviceId, MeasurementHistory],
    ) -> Tuple[Set[DeviceId], Set[DeviceId]]:
        """Re-evaluate candidates and reselect peers. Returns (added, dropped).

        A current peer with no comparable data keeps its previous score; only
        measured decorrelation removes a link.
        """
        scores: Dict[DeviceId, float] = {}
        shared: Dict[DeviceId, int] = {}
        for c in self.candidates(round):
            remote = reports.get(c)
            result = evaluate_candidate(local, remote, self.params) if remote is not None else None
            if result is not None:
                scores[c], shared[c] = result
            elif c in self.peers:
                scores[c] = self.peers[c].correlation
                shared[c] = self.peers[c].shared_destinations
        self.last_scores = dict(sorted(scores.items()))
        selected = select_peers(scores, self.params)
        new_peers = {}
        for p, s in selected:
            established = self.peers[p].established_round if p in self.peers else round
            new_peers[p] = PeerLink(p, s, shared[p], established)
        added = set(new_peers) - set(self.peers)
        dropped = set(self.peers) - set(new_peers)
        self.peers = new_peers
        return added, dropped


def bootstrap_candidates(overlay: Overlay, round: int) -> List[DeviceId]:
    return overlay.candidates(round)
