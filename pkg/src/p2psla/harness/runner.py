"""Strategy x seed sweeps and the result files they produce.

Output directory layout::

    results.csv      one row per (strategy, seed), columns = simnet.COLUMNS
    aggregate.csv    one row per strategy: runs, then <metric>_mean and <metric>_sd
    summary.json     scenario name, the run rows and the aggregate rows
    traces/          <strategy>-seed<seed>.{messages,activations,topology}.jsonl
    figures/         PNG bar charts rendered from aggregate.csv

Rows are ordered by (strategy, seed) using the strategy order of the
scenario, whatever order the worker pool finishes in.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..simnet import COLUMNS, MetricsReport, run
from ..strategies import StrategyKind
from .config import ScenarioConfig

RESULTS_FILE = "results.csv"
AGGREGATE_FILE = "aggregate.csv"
SUMMARY_FILE = "summary.json"
TRACE_DIR = "traces"

# columns that identify a run rather than measure it
KEY_COLUMNS = ("strategy", "seed")
METRIC_COLUMNS = tuple(c for c in COLUMNS if c not in KEY_COLUMNS)
AGGREGATE_COLUMNS = ("strategy", "runs") + tuple(
    f"{c}_{stat}" for c in METRIC_COLUMNS for stat in ("mean", "sd")
)

_FIELD_TYPES = {f.name: f.type for f in fields(MetricsReport)}


@dataclass
class MatrixResult:
    scenario: str
    reports: List[MetricsReport]
    aggregate: List[Dict[str, object]]


def trace_paths(trace_dir: Path, strategy: StrategyKind, seed: int) -> Dict[str, Path]:
    stem = f"{strategy.value}-seed{seed}"
    return {kind: trace_dir / f"{stem}.{kind}.jsonl" for kind in ("messages", "activations", "topology")}


def _jsonl(records) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


def run_one(
    scenario: ScenarioConfig,
    strategy: StrategyKind,
    seed: int,
    trace_dir: Optional[Union[str, Path]] = None,
) -> MetricsReport:
    """One simulation; with ``trace_dir`` set, also writes its three trace files."""
    if trace_dir is None:
        return run(scenario, strategy, seed).report
    trace_dir = Path(trace_dir)
    trace_dir.mkdir(parents=True, exist_ok=True)
    paths = trace_paths(trace_dir, strategy, seed)
    buf = io.StringIO()
    result = run(scenario, strategy, seed, trace=buf)
    paths["messages"].write_text(buf.getvalue(), encoding="utf-8")
    paths["activations"].write_text(_jsonl(result.activations), encoding="utf-8")
    paths["topology"].write_text(_jsonl(result.topology), encoding="utf-8")
    return result.report


def _run_job(args) -> MetricsReport:
    return run_one(*args)


def sort_key(strategies: Sequence[StrategyKind]):
    order = {s.value: i for i, s in enumerate(strategies)}
    return lambda rep: (order.get(rep.strategy, len(order)), rep.strategy, rep.seed)


def run_matrix(
    scenario: ScenarioConfig,
    strategies: Optional[Sequence[StrategyKind]] = None,
    seeds: Optional[Sequence[int]] = None,
    jobs: int = 1,
    trace_dir: Optional[Union[str, Path]] = None,
) -> MatrixResult:
    """Run every (strategy, seed) pair; defaults come from the scenario."""
    strategies = tuple(strategies or scenario.strategies)
    seeds = tuple(seeds if seeds is not None else scenario.seeds)
    if not strategies:
        raise ValueError("at least one strategy is required")
    if not seeds:
        raise ValueError("at least one seed is required")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    work = [(scenario, k, s, trace_dir) for k in strategies for s in seeds]
    if jobs == 1 or len(work) == 1:
        reports = [_run_job(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            reports = list(pool.map(_run_job, work))
    reports.sort(key=sort_key(strategies))
    return MatrixResult(scenario.name, reports, aggregate(reports, strategies))


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    # NaN entries (e.g. a run with no violations) are left out; sd is the sample sd, 0 for one value
    vals = [float(v) for v in values if not math.isnan(float(v))]
    if not vals:
        return math.nan, math.nan
    mean = math.fsum(vals) / len(vals)
    if len(vals) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def aggregate(
    reports: Sequence[MetricsReport],
    strategies: Optional[Sequence[StrategyKind]] = None,
) -> List[Dict[str, object]]:
    """Mean and sd of every metric across seeds, one row per strategy."""
    if strategies is None:
        names = sorted({r.strategy for r in reports})
    else:
        names = [s.value for s in strategies]
        names += sorted({r.strategy for r in reports} - set(names))
    rows = []
    for name in names:
        group = [r for r in reports if r.strategy == name]
        if not group:
            continue
        row: Dict[str, object] = {"strategy": name, "runs": len(group)}
        for col in METRIC_COLUMNS:
            mean, sd = _mean_sd([getattr(r, col) for r in group])
            row[f"{col}_mean"] = mean
            row[f"{col}_sd"] = sd
        rows.append(row)
    return rows


def _cell(value: object) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _csv_text(columns: Sequence[str], rows: Sequence[Dict[str, object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def results_csv(reports: Sequence[MetricsReport]) -> str:
    return _csv_text(COLUMNS, [r.to_row() for r in reports])


def aggregate_csv(rows: Sequence[Dict[str, object]]) -> str:
    return _csv_text(AGGREGATE_COLUMNS, rows)


def _json_safe(value: object) -> object:
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def summary_json(result: MatrixResult) -> str:
    doc = {
        "scenario": result.scenario,
        "columns": list(COLUMNS),
        "runs": [{k: _json_safe(v) for k, v in r.to_row().items()} for r in result.reports],
        "aggregate": [{k: _json_safe(v) for k, v in row.items()} for row in result.aggregate],
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_outputs(result: MatrixResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out_dir / RESULTS_FILE,
        "aggregate": out_dir / AGGREGATE_FILE,
        "summary": out_dir / SUMMARY_FILE,
    }
    paths["results"].write_text(results_csv(result.reports), encoding="utf-8")
    paths["aggregate"].write_text(aggregate_csv(result.aggregate), encoding="utf-8")
    paths["summary"].write_text(summary_json(result), encoding="utf-8")
    return paths


def _parse_cell(column: str, text: str) -> object:
    kind = _FIELD_TYPES[column]
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def read_results(path: Union[str, Path]) -> List[MetricsReport]:
    """Load a results.csv written by :func:`write_outputs`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"{path}: header does not match the results column set")
        reports = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
            reports.append(MetricsReport(**{c: _parse_cell(c, v) for c, v in zip(COLUMNS, row)}))
    return reports


def reaggregate(out_dir: Union[str, Path], scenario_name: Optional[str] = None) -> MatrixResult:
    """Rebuild aggregate.csv and summary.json from an existing results.csv."""
    out_dir = Path(out_dir)
    reports = read_results(out_dir / RESULTS_FILE)
    if scenario_name is None:
        summary = out_dir / SUMMARY_FILE
        scenario_name = "unknown"
        if summary.exists():
            scenario_name = json.loads(summary.read_text(encoding="utf-8")).get("scenario", scenario_name)
    # keep the strategy order of the file, which is the order of the original run
    order = list(dict.fromkeys(r.strategy for r in reports))
    strategies = [StrategyKind(v) for v in order]
    reports.sort(key=sort_key(strategies))
    result = MatrixResult(scenario_name, reports, aggregate(reports, strategies))
    write_outputs(result, out_dir)
    return result
