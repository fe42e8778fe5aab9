"""Acceptance criteria, one test each.

Every test records a ``criterion N: PASS|FAIL`` line that the pytest terminal
summary prints (see conftest.py); running this file directly prints the same
lines. The sweeps take a few minutes on one core; ``--jobs``-style
parallelism is used when more cores are available.
"""

import dataclasses
import math
import os
import statistics
import sys
from pathlib import Path

import numpy as np
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.stats import wilcoxon

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import ACCEPTANCE_LINES, SCENARIOS, make_scenario  # noqa: E402
from test_correlation import oracle_pearson, oracle_spearman  # noqa: E402

from p2psla.correlation import average_ranks, pearson, spearman  # noqa: E402
from p2psla.harness.config import load_scenario  # noqa: E402
from p2psla.harness.runner import results_csv, run_matrix, run_one  # noqa: E402
from p2psla.model import SessionBudget  # noqa: E402
from p2psla.simnet import run  # noqa: E402
from p2psla.strategies import StrategyKind  # noqa: E402

JOBS = os.cpu_count() or 1


def record(n, passed, detail):
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def by_strategy(result):
    out = {}
    for rep in result.reports:
        out.setdefault(rep.strategy, []).append(rep)
    return out


# -- 1 -----------------------------------------------------------------------------------


@st.composite
def device_worlds(draw):
    n_dev = draw(st.integers(1, 4))
    n_dest = draw(st.integers(1, 6))
    dests = tuple(range(100, 100 + n_dest))
    devices = []
    for d in range(n_dev):
        own = tuple(sorted(draw(st.sets(st.sampled_from(dests), min_size=1))))
        others = [x for x in range(n_dev) if x != d]
        nb = tuple(sorted(draw(st.sets(st.sampled_from(others)) if others else st.just(set()))))
        devices.append((d, own, nb))
    return dict(
        devices=tuple(devices),
        p_enter=draw(st.floats(0.0, 0.5)),
        p_exit=draw(st.floats(0.0, 1.0)),
        initial=draw(st.sampled_from(["normal", "violating", "stationary"])),
        per_destination=draw(st.booleans()),
        noise_sd=draw(st.sampled_from([0.0, 1.0, 8.0])),
        local_max=draw(st.integers(1, 4)),
        virtual_max=draw(st.integers(0, 4)),
        rounds=draw(st.integers(5, 30)),
        overlay={"topology_period": draw(st.integers(2, 6)), "min_correlation": draw(st.sampled_from([0.3, 0.7]))},
        network={"message_drop": draw(st.sampled_from([0.0, 0.0, 0.2]))},
    )


def test_criterion_01_budget_safety():
    states = []
    violations = []

    @settings(max_examples=80, deadline=None, derandomize=True, suppress_health_check=list(HealthCheck))
    @given(device_worlds(), st.sampled_from(list(StrategyKind)), st.integers(0, 1000))
    def check(world, kind, seed):
        sc = make_scenario(**world)
        budget = sc.budget
        for rec in run(sc, kind, seed).activations:
            states.append(1)
            if len(rec["activation"]) > budget.local_max or len(rec["virtual"]) > budget.virtual_max:
                violations.append(rec)

    check()
    n = len(states)
    record(1, n >= 1000 and not violations, f"{n} device states, {len(violations)} over budget")


# -- 2 -----------------------------------------------------------------------------------


def test_criterion_02_frequent_probing():
    sc = load_scenario(SCENARIOS / "frequent_probing.toml")
    n = len(sc.devices[0].destinations)
    k = sc.budget.local_max
    bound = math.ceil(n / k) * 2
    seen = {d: [] for d in sc.devices[0].destinations}
    for rec in run(sc, StrategyKind.LOCAL, sc.seeds[0]).activations:
        for d in rec["activation"]:
            seen[d].append(rec["round"])
    worst = 0
    for rounds in seen.values():
        # gaps to the run's start and end count too
        marks = [-1] + rounds + [sc.rounds]
        worst = max(worst, max(b - a for a, b in zip(marks, marks[1:])))
    record(2, worst <= bound, f"n={n}, k={k}, {sc.rounds} rounds: max gap {worst} rounds (bound {bound})")


# -- 3 -----------------------------------------------------------------------------------


def test_criterion_03_correlation_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    invariant = True
    checked = 0
    while checked < 500:
        size = int(rng.integers(3, 80))
        xs = rng.normal(0.0, 1.0, size) * rng.choice([1.0, 100.0])
        ys = rng.uniform(-1.0, 1.0) * xs + rng.normal(0.0, 1.0, size)
        if checked % 4 == 0:
            xs, ys = np.round(xs), np.round(ys)
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        checked += 1
        worst = max(
            worst,
            abs(pearson(xs, ys) - oracle_pearson(xs.tolist(), ys.tolist())),
            abs(spearman(xs, ys) - oracle_spearman(xs.tolist(), ys.tolist())),
        )
        tx = np.exp(xs / (np.abs(xs).max() or 1.0)) * 3.0 + 1.0
        if len(set(tx)) == len(set(xs)):
            invariant &= np.array_equal(average_ranks(tx), average_ranks(xs))
            invariant &= spearman(tx, ys) == spearman(xs, ys)
    record(3, worst <= 1e-9 and invariant, f"500 series, max |error| {worst:.2e}, monotone invariance exact: {invariant}")


# -- 4 -----------------------------------------------------------------------------------


def test_criterion_04_overlay_validity():
    sc = load_scenario(SCENARIOS / "overlay_groups.toml")
    group_of = {p[0]: path.group for p, path in sc.paths.items()}
    threshold = sc.overlay.min_correlation
    bad_seeds = []
    peers_total = 0
    updates = 0
    worst_cross = -1.0
    for seed in sc.seeds:
        topo = run(sc, StrategyKind.LOCAL_REMOTE, seed).topology
        ok = True
        for entry in topo:
            dev = entry["device"]
            updates += 1
            peers_total += len(entry["peers"])
            for p in entry["peers"]:
                ok &= group_of[p] == group_of[dev]
            for cand, score in entry["scores"].items():
                if group_of[int(cand)] != group_of[dev]:
                    worst_cross = max(worst_cross, score)
                    ok &= score <= threshold
        if not ok:
            bad_seeds.append(seed)
    record(
        4,
        not bad_seeds and peers_total > 0,
        f"{len(sc.seeds)} seeds, {updates} overlay updates, {peers_total / updates:.2f} peers/update, "
        f"max cross-group score {worst_cross:.3f}, failing seeds {bad_seeds}",
    )


# -- 5 -----------------------------------------------------------------------------------


def test_criterion_05_layering():
    base = load_scenario(SCENARIOS / "virtual_coverage.toml")
    base = dataclasses.replace(base, rounds=150)
    no_overlay = dataclasses.replace(
        base,
        devices=tuple(dataclasses.replace(d, neighbors=()) for d in base.devices),
    )
    no_virtual = dataclasses.replace(base, budget=SessionBudget(base.budget.local_max, 0))
    seeds = list(range(1, 11))
    lr_eq_local = all(
        run(no_overlay, StrategyKind.LOCAL_REMOTE, s).activations == run(no_overlay, StrategyKind.LOCAL, s).activations
        for s in seeds
    )
    v_eq_lr = all(
        run(no_virtual, StrategyKind.VIRTUAL, s).activations == run(no_virtual, StrategyKind.LOCAL_REMOTE, s).activations
        for s in seeds
    )
    record(5, lr_eq_local and v_eq_lr, f"10 seeds: LocalRemote(empty overlay)==Local {lr_eq_local}, Virtual(vmax=0)==LocalRemote {v_eq_lr}")


# -- 6 -----------------------------------------------------------------------------------


def test_criterion_06_local_beats_random():
    sc = load_scenario(SCENARIOS / "local_vs_random.toml")
    res = by_strategy(run_matrix(sc, [StrategyKind.RANDOM, StrategyKind.LOCAL], jobs=JOBS))
    local = [r.detection_ratio for r in res["local"]]
    rand = [r.detection_ratio for r in res["random"]]
    wins = sum(a > b for a, b in zip(local, rand))
    margin = statistics.mean(local) - statistics.mean(rand)
    p = wilcoxon(local, rand, alternative="greater").pvalue
    record(
        6,
        wins >= 27,
        f"Local {statistics.mean(local):.3f} vs Random {statistics.mean(rand):.3f} "
        f"(margin {100 * margin:.1f} pp), Local ahead on {wins}/30 seeds, one-sided Wilcoxon p={p:.1e}",
    )


# -- 7 -----------------------------------------------------------------------------------


def test_criterion_07_remote_information_lowers_lag():
    sc = load_scenario(SCENARIOS / "adaptivity.toml")
    res = by_strategy(run_matrix(sc, [StrategyKind.LOCAL, StrategyKind.LOCAL_REMOTE], jobs=JOBS))
    lag_local = statistics.mean(r.mean_detection_lag for r in res["local"])
    lag_lr = statistics.mean(r.mean_detection_lag for r in res["local_remote"])
    wins = sum(a.mean_detection_lag < b.mean_detection_lag for a, b in zip(res["local_remote"], res["local"]))
    record(
        7,
        lag_lr < lag_local,
        f"mean detection lag LocalRemote {lag_lr:.3f} < Local {lag_local:.3f} rounds "
        f"({len(sc.seeds)} seeds, LocalRemote lower on {wins})",
    )


# -- 8 -----------------------------------------------------------------------------------


def test_criterion_08_virtual_coverage():
    sc = load_scenario(SCENARIOS / "virtual_coverage.toml")
    res = by_strategy(run_matrix(sc, [StrategyKind.LOCAL_REMOTE, StrategyKind.VIRTUAL], jobs=JOBS))
    cov_v = statistics.mean(r.covered_destinations_per_device_per_round for r in res["virtual"])
    cov_lr = statistics.mean(r.covered_destinations_per_device_per_round for r in res["local_remote"])
    real_v = statistics.mean(r.real_sessions_per_device_per_round for r in res["virtual"])
    k = sc.budget.local_max
    record(
        8,
        cov_v > k and cov_v > cov_lr,
        f"destinations with a result per device-round: Virtual {cov_v:.3f} (real sessions {real_v:.2f}) "
        f"> budget {k} and > LocalRemote {cov_lr:.3f}, {len(sc.seeds)} seeds",
    )


# -- 9 -----------------------------------------------------------------------------------


def test_criterion_09_virtual_accuracy_cost():
    sc = load_scenario(SCENARIOS / "virtual_accuracy.toml")
    res = by_strategy(run_matrix(sc, [StrategyKind.LOCAL_REMOTE, StrategyKind.VIRTUAL], jobs=JOBS))
    fp_v = sum(r.false_virtual_detections for r in res["virtual"])
    fn_v = sum(r.false_virtual_negatives for r in res["virtual"])
    fp_lr = sum(r.false_virtual_detections for r in res["local_remote"])
    record(
        9,
        fp_v > fp_lr == 0,
        f"false detections Virtual {fp_v} (plus {fn_v} false negatives) vs LocalRemote {fp_lr}, {len(sc.seeds)} seeds",
    )


# -- 10 ----------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    sc = load_scenario(SCENARIOS / "demo.toml")
    mismatches = []
    compared = 0
    for kind in StrategyKind:
        for seed in sc.seeds:
            a, b = tmp_path / "a", tmp_path / "b"
            ra = run_one(sc, kind, seed, a)
            rb = run_one(sc, kind, seed, b)
            compared += 1
            if results_csv([ra]) != results_csv([rb]):
                mismatches.append((kind.value, seed, "report"))
            for f in sorted(a.iterdir()):
                compared += 1
                if f.read_bytes() != (b / f.name).read_bytes():
                    mismatches.append((kind.value, seed, f.name))
    record(10, not mismatches, f"{compared} reports and trace files compared byte for byte, mismatches {mismatches}")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
