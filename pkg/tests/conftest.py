from pathlib import Path

import pytest

from p2psla.harness.config import parse_scenario

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"

# lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def scenario_doc(
    devices=((0, (10, 11), ()),),
    base=60.0,
    offset=50.0,
    noise_sd=0.0,
    p_enter=0.0,
    p_exit=0.0,
    initial="normal",
    per_destination=False,
    local_max=1,
    virtual_max=0,
    rounds=20,
    strategies=("local",),
    seeds=(0,),
    **top,
):
    """Scenario dict with one group; ``devices`` holds (id, destinations, neighbors)."""
    measuring = {d for d, _, _ in devices}
    dests = sorted({e for _, ds, _ in devices for e in ds} - measuring)
    doc = {
        "rounds": rounds,
        "strategies": list(strategies),
        "seeds": list(seeds),
        "endpoints": dests,
        "slo": {"threshold": 100.0},
        "budget": {"local_max": local_max, "virtual_max": virtual_max},
        "groups": [
            {
                "id": "g",
                "p_enter": p_enter,
                "p_exit": p_exit,
                "offset": offset,
                "noise_sd": noise_sd,
                "initial": initial,
                "per_destination": per_destination,
            }
        ],
        "devices": [
            {"id": d, "destinations": list(ds), "neighbors": list(nb)} for d, ds, nb in devices
        ],
        "paths": [
            {"source": d, "destination": e, "base_latency": base, "group": "g"}
            for d, ds, _ in devices
            for e in ds
        ],
    }
    doc.update(top)
    return doc


def make_scenario(**kwargs):
    return parse_scenario(scenario_doc(**kwargs))


@pytest.fixture
def scenarios_dir():
    return SCENARIOS
