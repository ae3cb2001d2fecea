import numpy as np
import pytest

from ehexit.ehsim import Scenario, StoreParams
from ehexit.experiment import data_path
from ehexit.netcore import ExitProfile, build_toy_network
from ehexit.toytrain import gen_dataset
from ehexit.traces import EventStream, PowerTrace

REFERENCE_FLOPS = (445200, 1260200, 1620200)
REFERENCE_ACC = (0.649, 0.720, 0.730)


def reference_profiles(mj_per_mflop=1.5):
    return tuple(ExitProfile(f, 0.0, a, f / 1e6 * mj_per_mflop) for f, a in zip(REFERENCE_FLOPS, REFERENCE_ACC))


@pytest.fixture(scope="session")
def solar_trace():
    return PowerTrace.load(data_path("solar_like.csv"))


@pytest.fixture(scope="session")
def reference_scenario(solar_trace):
    ev = EventStream.generate(500, np.random.default_rng(0), solar_trace.start, solar_trace.end)
    return Scenario(solar_trace, ev, reference_profiles(), StoreParams(10.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def toy_net():
    return build_toy_network(0)


@pytest.fixture(scope="session")
def toy_data():
    train = gen_dataset(10, 40, 0.3, 0, "train", max_shift=3)
    test = gen_dataset(10, 20, 0.3, 0, "test", max_shift=3)
    return train, test


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}
ACCEPTANCE_IDS = tuple(range(1, 11))


def pytest_terminal_summary(terminalreporter):
    if "active" not in ACCEPTANCE:  # acceptance module not collected
        return
    terminalreporter.section("acceptance criteria")
    for k in ACCEPTANCE_IDS:
        ok, detail = ACCEPTANCE.get(k, (False, "not run"))
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
