import numpy as np
import pytest

from lqisoc import GroundTruthMoments, build_reaching_model, forward


@pytest.fixture(scope="session")
def reach_lqg():
    return build_reaching_model(kind="lqg")


@pytest.fixture(scope="session")
def reach_lqs():
    return build_reaching_model(kind="lqs")


@pytest.fixture(scope="session")
def lqg_forward(reach_lqg):
    return forward(reach_lqg)


@pytest.fixture(scope="session")
def lqs_forward(reach_lqs):
    return forward(reach_lqs)


def truth_of(problem, traj):
    mean, cov = traj.measured(problem.system.M)
    return GroundTruthMoments(mean, cov)


@pytest.fixture(scope="session")
def lqg_truth(reach_lqg, lqg_forward):
    return truth_of(reach_lqg, lqg_forward[1])


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(b).max(), 1e-300)
    return np.abs(a - b).max() / scale


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
