import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crowdqueue.geometry import build_corridor

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def narrow():
    return build_corridor(0.9, 9.6, 0.9, 0.3)[1]


@pytest.fixture(scope="session")
def wide():
    return build_corridor(5.7, 9.6, 0.9, 0.3)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary -------------------------------------------------------------

N_CRITERIA = 12
_VERDICTS = pytest.StashKey[dict]()


def full_fidelity() -> bool:
    """``CROWDQUEUE_FULL=1`` switches the acceptance suite to 5000-run ensembles."""
    return os.environ.get("CROWDQUEUE_FULL", "") not in ("", "0")


@pytest.fixture
def verdict(request):
    """Record ``(number, passed, detail)`` for the end-of-session summary."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        store[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, None)
    if store is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in store:
            ok, detail = store[n]
            terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        else:
            terminalreporter.write_line(f"CRITERION {n}: FAIL not evaluated (error or deselected)")
