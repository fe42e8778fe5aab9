"""Destination rank: score production, normalization, prioritization and
constraint satisfaction for one device and one round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from operator import attrgetter
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .model import DestinationId, Direction, MeasurementSample, SessionBudget, Slo

ActivationSet = Tuple[DestinationId, ...]

NEVER_MEASURED = math.inf

_by_round = attrgetter("round")


@dataclass(frozen=True)
class RankParams:
    window: int = 20
    discount: float = 0.95
    proximity_weight: float = 1.0
    staleness_weight: float = 1.0
    # penalty on the weighted spread of per-sample closeness; 0 keeps the plain mean
    spread_penalty: float = 0.0
    # "period": elapsed rounds over the round-robin period ceil(n / local_max), uncapped;
    # "minmax": plain min-max like the proximity component
    staleness_normalization: str = "period"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.proximity_weight < 0 or self.staleness_weight < 0:
            raise ValueError("score weights must be non-negative")
        if self.proximity_weight == 0 and self.staleness_weight == 0:
            raise ValueError("score weights must not both be zero")
        if self.spread_penalty < 0:
            raise ValueError("spread_penalty must be non-negative")
        if self.staleness_normalization not in ("period", "minmax"):
            raise ValueError("staleness_normalization must be 'period' or 'minmax'")


@dataclass(frozen=True)
class ScoredDestination:
    destination: DestinationId
    proximity_raw: float
    staleness_raw: float
    proximity_norm: float
    staleness_norm: float
    total: float


@dataclass(frozen=True)
class Ranking:
    scored: Tuple[ScoredDestination, ...]  # prioritized, best first
    activation: ActivationSet

    @property
    def order(self) -> List[DestinationId]:
        return [s.destination for s in self.scored]


def closeness(value: float, slo: Slo) -> float:
    """1 at or past the threshold, falling linearly to 0 at distance |threshold|."""
    if slo.at_or_past(value):
        return 1.0
    gap = abs(slo.threshold - value) / abs(slo.threshold)
    return 1.0 - min(max(gap, 0.0), 1.0)


def closeness_array(values: np.ndarray, slo: Slo) -> np.ndarray:
    """Vectorized :func:`closeness`."""
    if slo.direction is Direction.ABOVE:
        past = values >= slo.threshold
    else:
        past = values <= slo.threshold
    gap = np.clip(np.abs(slo.threshold - values) / abs(slo.threshold), 0.0, 1.0)
    return np.where(past, 1.0, 1.0 - gap)


def proximity_score(
    samples: Sequence[MeasurementSample],
    slo: Slo,
    current_round: int,
    params: RankParams,
) -> float:
    """Discount-weighted mean closeness of the newest ``params.window`` samples."""
    if not samples:
        return 0.0
    recent = sorted(samples, key=_by_round)[-params.window:]
    rounds = np.fromiter((s.round for s in recent), dtype=float, count=len(recent))
    values = np.fromiter((s.value for s in recent), dtype=float, count=len(recent))
    weights = params.discount ** (current_round - rounds)
    close = closeness_array(values, slo)
    total_w = weights.sum()
    mean = float(np.dot(weights, close) / total_w)
    if params.spread_penalty == 0.0:
        return mean
    var = float(np.dot(weights, (close - mean) ** 2) / total_w)
    return mean - params.spread_penalty * math.sqrt(var)


def staleness_score(last_measured: Optional[int], current_round: int) -> float:
    if last_measured is None:
        return NEVER_MEASURED
    return float(current_round - last_measured)


def normalize(raw: Sequence[float]) -> List[float]:
    """Min-max normalize to [0, 1].

    Infinite entries map to 1.0 and are left out of the finite range. A
    degenerate range (all finite values equal) maps every finite entry to 0.5.
    """
    if not raw:
        raise ValueError("normalize needs at least one score")
    finite = [x for x in raw if math.isfinite(x)]
    lo = min(finite) if finite else 0.0
    hi = max(finite) if finite else 0.0
    span = hi - lo
    out = []
    for x in raw:
        if math.isinf(x) and x > 0:
            out.append(1.0)
        elif span == 0.0:
            out.append(0.5)
        else:
            out.append((x - lo) / span)
    return out


def normalize_staleness(raw: Sequence[float], local_max: int) -> List[float]:
    """Elapsed rounds in units of the round-robin period ``ceil(n / local_max)``.

    Not capped at 1: a destination left out long enough outgrows any
    proximity advantage. Never-measured entries map to 1.0.
    """
    period = math.ceil(len(raw) / local_max)
    return [1.0 if math.isinf(x) else x / period for x in raw]


def score_destinations(
    proximity_raw: Mapping[DestinationId, float],
    staleness_raw: Mapping[DestinationId, float],
    params: RankParams,
    local_max: int = 1,
) -> List[ScoredDestination]:
    dests = sorted(proximity_raw)
    if not dests:
        raise ValueError("destination set must be non-empty")
    prox = normalize([proximity_raw[d] for d in dests])
    stale_raw = [staleness_raw[d] for d in dests]
    if params.staleness_normalization == "period":
        stale = normalize_staleness(stale_raw, local_max)
    else:
        stale = normalize(stale_raw)
    return [
        ScoredDestination(
            destination=d,
            proximity_raw=proximity_raw[d],
            staleness_raw=staleness_raw[d],
            proximity_norm=p,
            staleness_norm=s,
            total=params.proximity_weight * p + params.staleness_weight * s,
        )
        for d, p, s in zip(dests, prox, stale)
    ]


def prioritize(scored: Iterable[ScoredDestination]) -> List[ScoredDestination]:
    """Best first. Never-measured destinations precede every measured one;
    within each class, higher total first, then lower id."""
    return sorted(scored, key=lambda s: (not math.isinf(s.staleness_raw), -s.total, s.destination))


def satisfy_constraints(
    prioritized: Sequence[ScoredDestination],
    local_max: int,
    forced: Iterable[DestinationId] = (),
) -> ActivationSet:
    """Cut the prioritized list to ``local_max``; forced destinations take slots first."""
    chosen = sorted(set(forced))[:local_max]
    for s in prioritized:
        if len(chosen) >= local_max:
            break
        if s.destination not in chosen:
            chosen.append(s.destination)
    return tuple(chosen)


def rank_from_raw(
    proximity_raw: Mapping[DestinationId, float],
    staleness_raw: Mapping[DestinationId, float],
    params: RankParams,
    local_max: int,
    forced: Iterable[DestinationId] = (),
) -> Ranking:
    ordered = prioritize(score_destinations(proximity_raw, staleness_raw, params, local_max))
    return Ranking(tuple(ordered), satisfy_constraints(ordered, local_max, forced))


def rank_destinations(
    destinations: Iterable[DestinationId],
    proximity_samples: Mapping[DestinationId, Sequence[MeasurementSample]],
    last_measured: Mapping[DestinationId, Optional[int]],
    slo: Slo,
    current_round: int,
    params: RankParams,
    budget: SessionBudget,
    forced: Iterable[DestinationId] = (),
) -> Ranking:
    """All four phases over a device's view of its destinations."""
    prox: Dict[DestinationId, float] = {}
    stale: Dict[DestinationId, float] = {}
    for d in destinations:
        prox[d] = proximity_score(proximity_samples.get(d, ()), slo, current_round, params)
        stale[d] = staleness_score(last_measured.get(d), current_round)
    return rank_from_raw(prox, stale, params, budget.local_max, forced)


def destination_rank(*args, **kwargs) -> ActivationSet:
    """Same arguments as :func:`rank_destinations`; returns only the activation set."""
    return rank_destinations(*args, **kwargs).activation
