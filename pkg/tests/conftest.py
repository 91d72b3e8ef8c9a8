import sys

import numpy as np
import pytest

from timely_sched.dual import subgradient_search
from timely_sched.experiments import reference_preset
from timely_sched.model import ChannelModel, ResourceGrid, SuccessCurve, SystemConfig, UserConfig


@pytest.fixture(scope="session")
def preset():
    return reference_preset()


@pytest.fixture(scope="session")
def preset_solutions(preset):
    return {m: subgradient_search(preset, m) for m in ("zero", "perfect", "imperfect")}


def small_system(K=2, levels=41, step=0.05, window=2, p=0.8, q=0.1, budget=1.0):
    """Two-user Markov instance on a coarse grid; fast enough for property tests."""
    if K == 1:
        channel = ChannelModel.static(2.0)
    else:
        P = np.full((K, K), 0.2 / (K - 1))
        np.fill_diagonal(P, 0.8)
        channel = ChannelModel(states=tuple(range(1, K + 1)), transition=tuple(map(tuple, P)))
    users = [
        UserConfig(0.5, 2, 2.0, window, p, q, channel, SuccessCurve.logistic(1.0)),
        UserConfig(0.3, 3, 3.0, window, p, min(q, 0.3), channel, SuccessCurve.logistic(1.2)),
    ]
    return SystemConfig(users=users, A_max=1, budget=budget, deadline_cap=3, grid=ResourceGrid.uniform(step, levels))


@pytest.fixture
def small():
    return small_system()


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    details = getattr(sys.modules.get("test_acceptance"), "DETAILS", {})
    verdicts = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if outcome != "passed" or verdicts.get(name) is None:
                verdicts[name] = "PASS" if outcome == "passed" else "FAIL"
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(verdicts):
        terminalreporter.write_line(f"{verdicts[name]}  {name}  {details.get(name, '')}")
