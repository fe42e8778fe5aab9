"""Core domain types: SLOs, measurement samples, bounded histories, budgets."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, Iterator, List, Optional

DeviceId = int
DestinationId = int


class Direction(enum.Enum):
    ABOVE = "above"
    BELOW = "below"


class Origin(enum.Enum):
    LOCAL = "local"
    REMOTE = "remote"
    VIRTUAL = "virtual"


@dataclass(frozen=True)
class Slo:
    """A service level objective on one metric.

    ``direction`` says which side of ``threshold`` counts as a violation.
    A value exactly at the threshold is not a violation.
    """

    metric_id: str
    threshold: float
    direction: Direction = Direction.ABOVE

    def __post_init__(self):
        if not self.metric_id:
            raise ValueError("metric_id must be non-empty")
        if not math.isfinite(self.threshold):
            raise ValueError(f"threshold must be finite, got {self.threshold!r}")

    def breached(self, value: float) -> bool:
        if self.direction is Direction.ABOVE:
            return value > self.threshold
        return value < self.threshold

    def at_or_past(self, value: float) -> bool:
        if self.direction is Direction.ABOVE:
            return value >= self.threshold
        return value <= self.threshold


@dataclass(frozen=True)
class MeasurementSample:
    source: DeviceId
    destination: DestinationId
    round: int
    value: float
    origin: Origin = Origin.LOCAL
    # producing device for REMOTE and VIRTUAL samples
    via: Optional[DeviceId] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"sample value must be finite, got {self.value!r}")
        if self.round < 0:
            raise ValueError(f"round must be non-negative, got {self.round}")
        if (self.origin is Origin.LOCAL) != (self.via is None):
            raise ValueError("via is required for remote/virtual samples and forbidden for local ones")

    def as_origin(self, origin: Origin, via: DeviceId, source: DeviceId) -> "MeasurementSample":
        """Relabel a received sample for storage at ``source``."""
        return MeasurementSample(source, self.destination, self.round, self.value, origin, via)


@dataclass(frozen=True)
class SessionBudget:
    local_max: int
    virtual_max: int = 0

    def __post_init__(self):
        if self.local_max < 1:
            raise ValueError(f"local_max must be >= 1, got {self.local_max}")
        if self.virtual_max < 0:
            raise ValueError(f"virtual_max must be >= 0, got {self.virtual_max}")


def global_session_bound(budgets: Iterable[SessionBudget]) -> int:
    """Network-wide session bound, taken as the sum of local budgets."""
    return sum(b.local_max for b in budgets)


class MeasurementHistory:
    """Per-destination sliding window of the most recent ``capacity`` samples.

    Rounds must be non-decreasing per destination. ``last_measured`` tracks
    only locally produced samples; ``last_virtual`` tracks adopted virtual ones.
    """

    def __init__(self, capacity: int = 20):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._samples: Dict[DestinationId, Deque[MeasurementSample]] = {}
        self.last_measured: Dict[DestinationId, int] = {}
        self.last_virtual: Dict[DestinationId, int] = {}

    def append(self, sample: MeasurementSample) -> None:
        window = self._samples.get(sample.destination)
        if window is None:
            window = self._samples[sample.destination] = deque(maxlen=self.capacity)
        elif window and sample.round < window[-1].round:
            raise ValueError(
                f"round {sample.round} is older than newest stored round "
                f"{window[-1].round} for destination {sample.destination}"
            )
        window.append(sample)
        if sample.origin is Origin.LOCAL:
            self.last_measured[sample.destination] = sample.round
        elif sample.origin is Origin.VIRTUAL:
            self.last_virtual[sample.destination] = sample.round

    def samples(self, destination: DestinationId) -> List[MeasurementSample]:
        return list(self._samples.get(destination, ()))

    def local_samples(self, destination: DestinationId) -> List[MeasurementSample]:
        return [s for s in self._samples.get(destination, ()) if s.origin is Origin.LOCAL]

    def destinations(self) -> List[DestinationId]:
        return sorted(self._samples)

    def last_result(self, destination: DestinationId, include_virtual: bool = False) -> Optional[int]:
        last = self.last_measured.get(destination)
        if include_virtual:
            virt = self.last_virtual.get(destination)
            if virt is not None and (last is None or virt > last):
                return virt
        return last

    def __len__(self) -> int:
        return sum(len(w) for w in self._samples.values())

    def __iter__(self) -> Iterator[MeasurementSample]:
        for d in sorted(self._samples):
            yield from self._samples[d]


def append_sample(history: MeasurementHistory, sample: MeasurementSample) -> MeasurementHistory:
    history.append(sample)
    return history
