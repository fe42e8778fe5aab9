"""Scenario files: TOML in, validated :class:`ScenarioConfig` out.

See ``docs/formats.md`` for the full schema. Every validation error names
the offending field by its dotted path (``devices[2].neighbors[0]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..correlation import Method, OverlayParams
from ..model import DeviceId, DestinationId, Direction, SessionBudget, Slo
from ..rank import RankParams
from ..simnet import GroupModel, PathModel
from ..strategies import StrategyKind


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` is the dotted field path, or None for parse errors."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class DeviceSpec:
    id: DeviceId
    destinations: Tuple[DestinationId, ...] = ()
    neighbors: Tuple[DeviceId, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    rounds: int
    slo: Slo
    budget: SessionBudget
    rank: RankParams
    overlay: OverlayParams
    groups: Dict[str, GroupModel]
    devices: Tuple[DeviceSpec, ...]
    paths: Dict[Tuple[DeviceId, DestinationId], PathModel]
    strategies: Tuple[StrategyKind, ...]
    seeds: Tuple[int, ...]
    message_drop: float = 0.0

    def device(self, device_id: DeviceId) -> DeviceSpec:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def measuring_devices(self) -> List[DeviceSpec]:
        return [d for d in self.devices if d.destinations]


_TOP = {"name", "rounds", "strategies", "seeds", "endpoints", "slo", "budget", "rank",
        "overlay", "network", "groups", "devices", "paths"}
_SLO = {"metric_id", "threshold", "direction"}
_BUDGET = {"local_max", "virtual_max"}
_RANK = {"window", "discount", "proximity_weight", "staleness_weight", "spread_penalty",
         "staleness_normalization"}
_OVERLAY = {"min_correlation", "max_peers", "min_shared_samples", "method", "topology_period"}
_NETWORK = {"message_drop"}
_GROUP = {"id", "p_enter", "p_exit", "offset", "noise_sd", "initial", "per_destination"}
_DEVICE = {"id", "destinations", "neighbors"}
_PATH = {"source", "destination", "base_latency", "group"}


def _table(raw: Any, path: str, allowed: set) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise ScenarioError("expected a table", path)
    for key in raw:
        if key not in allowed:
            raise ScenarioError(f"unknown field {key!r}", f"{path}.{key}" if path else key)
    return raw


def _array_of_tables(raw: Any, path: str) -> List[Any]:
    if not isinstance(raw, list):
        raise ScenarioError("expected an array of tables", path)
    return raw


def _int(value: Any, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"expected an integer, got {value!r}", path)
    if minimum is not None and value < minimum:
        raise ScenarioError(f"must be >= {minimum}, got {value}", path)
    return value


def _float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", path)
    if not math.isfinite(value):
        raise ScenarioError("must be finite", path)
    return float(value)


def _ints(value: Any, path: str, minimum: Optional[int] = None) -> List[int]:
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list):
        raise ScenarioError("expected an integer or an array of integers", path)
    return [_int(v, f"{path}[{i}]", minimum) for i, v in enumerate(value)]


def _build(path: str, factory, **kwargs):
    """Run a domain-type constructor, re-raising its ValueError at ``path``."""
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from None


def parse_scenario(data: Mapping[str, Any], name: str = "scenario") -> ScenarioConfig:
    """Validate an already-parsed scenario document and fill in defaults."""
    doc = _table(dict(data), "", _TOP)

    rounds = _int(doc.get("rounds", 100), "rounds", 1)

    slo_raw = _table(doc.get("slo", {}), "slo", _SLO)
    if "threshold" not in slo_raw:
        raise ScenarioError("missing required field", "slo.threshold")
    threshold = _float(slo_raw["threshold"], "slo.threshold")
    if threshold == 0.0:
        raise ScenarioError("threshold must be non-zero", "slo.threshold")
    direction_raw = slo_raw.get("direction", "above")
    try:
        direction = Direction(direction_raw)
    except ValueError:
        raise ScenarioError(f"expected 'above' or 'below', got {direction_raw!r}", "slo.direction") from None
    metric_id = slo_raw.get("metric_id", "one_way_delay_ms")
    if not isinstance(metric_id, str):
        raise ScenarioError("expected a string", "slo.metric_id")
    slo = _build("slo", Slo, metric_id=metric_id, threshold=threshold, direction=direction)

    b = _table(doc.get("budget", {}), "budget", _BUDGET)
    budget = _build(
        "budget",
        SessionBudget,
        local_max=_int(b.get("local_max", 1), "budget.local_max", 1),
        virtual_max=_int(b.get("virtual_max", 0), "budget.virtual_max", 0),
    )

    rk = _table(doc.get("rank", {}), "rank", _RANK)
    rank = _build(
        "rank",
        RankParams,
        window=_int(rk.get("window", 20), "rank.window", 1),
        discount=_float(rk.get("discount", 0.95), "rank.discount"),
        proximity_weight=_float(rk.get("proximity_weight", 1.0), "rank.proximity_weight"),
        staleness_weight=_float(rk.get("staleness_weight", 1.0), "rank.staleness_weight"),
        spread_penalty=_float(rk.get("spread_penalty", 0.0), "rank.spread_penalty"),
        staleness_normalization=rk.get("staleness_normalization", "period"),
    )

    ov = _table(doc.get("overlay", {}), "overlay", _OVERLAY)
    method_raw = ov.get("method", "pearson")
    try:
        method = Method(method_raw)
    except ValueError:
        raise ScenarioError(f"expected 'pearson' or 'spearman', got {method_raw!r}", "overlay.method") from None
    overlay = _build(
        "overlay",
        OverlayParams,
        min_correlation=_float(ov.get("min_correlation", 0.7), "overlay.min_correlation"),
        max_peers=_int(ov.get("max_peers", 4), "overlay.max_peers", 1),
        min_shared_samples=_int(ov.get("min_shared_samples", 5), "overlay.min_shared_samples", 3),
        method=method,
        topology_period=_int(ov.get("topology_period", 10), "overlay.topology_period", 1),
    )

    net = _table(doc.get("network", {}), "network", _NETWORK)
    message_drop = _float(net.get("message_drop", 0.0), "network.message_drop")
    if not 0.0 <= message_drop < 1.0:
        raise ScenarioError("must be in [0, 1)", "network.message_drop")

    groups: Dict[str, GroupModel] = {}
    for i, g in enumerate(_array_of_tables(doc.get("groups", []), "groups")):
        p = f"groups[{i}]"
        g = _table(g, p, _GROUP)
        for req in ("id", "offset"):
            if req not in g:
                raise ScenarioError("missing required field", f"{p}.{req}")
        gid = g["id"]
        if not isinstance(gid, str) or not gid:
            raise ScenarioError("expected a non-empty string", f"{p}.id")
        if gid in groups:
            raise ScenarioError(f"duplicate group id {gid!r}", f"{p}.id")
        per_dest = g.get("per_destination", False)
        if not isinstance(per_dest, bool):
            raise ScenarioError("expected a boolean", f"{p}.per_destination")
        groups[gid] = _build(
            p,
            GroupModel,
            id=gid,
            p_enter=_float(g.get("p_enter", 0.0), f"{p}.p_enter"),
            p_exit=_float(g.get("p_exit", 0.0), f"{p}.p_exit"),
            offset=_float(g["offset"], f"{p}.offset"),
            noise_sd=_float(g.get("noise_sd", 0.0), f"{p}.noise_sd"),
            initial=g.get("initial", "normal"),
            per_destination=per_dest,
        )

    devices: Dict[int, DeviceSpec] = {}
    device_paths: Dict[int, str] = {}
    for i, e in enumerate(_ints(doc.get("endpoints", []), "endpoints", 0)):
        if e in devices:
            raise ScenarioError(f"duplicate device id {e}", f"endpoints[{i}]")
        devices[e] = DeviceSpec(e)
        device_paths[e] = f"endpoints[{i}]"
    raw_devices = _array_of_tables(doc.get("devices", []), "devices")
    for i, d in enumerate(raw_devices):
        p = f"devices[{i}]"
        d = _table(d, p, _DEVICE)
        if "id" not in d:
            raise ScenarioError("missing required field", f"{p}.id")
        did = _int(d["id"], f"{p}.id", 0)
        if did in devices:
            raise ScenarioError(f"duplicate device id {did}", f"{p}.id")
        dests = _ints(d.get("destinations", []), f"{p}.destinations", 0)
        neigh = _ints(d.get("neighbors", []), f"{p}.neighbors", 0)
        if len(set(dests)) != len(dests):
            raise ScenarioError("duplicate destination", f"{p}.destinations")
        devices[did] = DeviceSpec(did, tuple(dests), tuple(sorted(set(neigh))))
        device_paths[did] = p
    if not any(d.destinations for d in devices.values()):
        raise ScenarioError("at least one device must have destinations", "devices")
    for did, spec in devices.items():
        p = device_paths[did]
        for j, dest in enumerate(spec.destinations):
            if dest not in devices:
                raise ScenarioError(f"unknown device {dest}", f"{p}.destinations[{j}]")
            if dest == did:
                raise ScenarioError("a device cannot measure itself", f"{p}.destinations[{j}]")
        for j, n in enumerate(spec.neighbors):
            if n not in devices or not devices[n].destinations:
                raise ScenarioError(f"neighbor {n} is not a measuring device", f"{p}.neighbors")
            if n == did:
                raise ScenarioError("a device cannot neighbor itself", f"{p}.neighbors")

    paths: Dict[Tuple[int, int], PathModel] = {}
    for i, entry in enumerate(_array_of_tables(doc.get("paths", []), "paths")):
        p = f"paths[{i}]"
        entry = _table(entry, p, _PATH)
        for req in ("source", "destination", "base_latency", "group"):
            if req not in entry:
                raise ScenarioError("missing required field", f"{p}.{req}")
        sources = _ints(entry["source"], f"{p}.source", 0)
        dests = _ints(entry["destination"], f"{p}.destination", 0)
        base = _float(entry["base_latency"], f"{p}.base_latency")
        gid = entry["group"]
        if gid not in groups:
            raise ScenarioError(f"unknown group {gid!r}", f"{p}.group")
        group = groups[gid]
        if not slo.breached(base + group.offset):
            raise ScenarioError(
                f"base_latency + group offset ({base + group.offset}) does not breach the SLO",
                f"{p}.base_latency",
            )
        for s in sources:
            for d in dests:
                if (s, d) in paths:
                    raise ScenarioError(f"duplicate path ({s}, {d})", p)
                paths[(s, d)] = _build(p, PathModel, source=s, destination=d, base_latency=base, group=gid)
    for did, spec in devices.items():
        for j, dest in enumerate(spec.destinations):
            if (did, dest) not in paths:
                raise ScenarioError(f"no path defined for ({did}, {dest})", f"{device_paths[did]}.destinations[{j}]")

    raw_strats = doc.get("strategies", [k.value for k in StrategyKind])
    if not isinstance(raw_strats, list):
        raise ScenarioError("expected an array of strategy names", "strategies")
    strategies = tuple(parse_strategy(s, f"strategies[{i}]") for i, s in enumerate(raw_strats))
    if not strategies:
        raise ScenarioError("at least one strategy is required", "strategies")
    seeds = tuple(_ints(doc.get("seeds", [0]), "seeds", 0))
    if not seeds:
        raise ScenarioError("at least one seed is required", "seeds")

    name_raw = doc.get("name", name)
    if not isinstance(name_raw, str):
        raise ScenarioError("expected a string", "name")
    return ScenarioConfig(
        name=name_raw,
        rounds=rounds,
        slo=slo,
        budget=budget,
        rank=rank,
        overlay=overlay,
        groups=groups,
        devices=tuple(devices[k] for k in sorted(devices)),
        paths=dict(sorted(paths.items())),
        strategies=strategies,
        seeds=seeds,
        message_drop=message_drop,
    )


def parse_strategy(value: Any, path: str = "strategy") -> StrategyKind:
    try:
        return StrategyKind(value)
    except ValueError:
        names = ", ".join(k.value for k in StrategyKind)
        raise ScenarioError(f"unknown strategy {value!r} (expected one of {names})", path) from None


def loads_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    return parse_scenario(data, name)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    return loads_scenario(path.read_text(encoding="utf-8"), name=path.stem)
