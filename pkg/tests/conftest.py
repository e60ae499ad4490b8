import os

import hypothesis
import numpy as np
import pytest

from modwave.eikonal import EikonalConfig
from modwave.model import Metric, ScatteringData, make_profile
from modwave.profile import ProfileEvaluator
from modwave.reduced import AsymptoticState

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=8, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=400, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_state(profile="bump", amplitude=1.0, R=1.0, c_prime0=1.0):
    data = ScatteringData(make_profile(profile), R=R, amplitude=amplitude)
    return AsymptoticState.from_metric(Metric.sound_speed(c_prime0), data)


def make_evaluator(epsilon=0.05, delta=0.1, **kw):
    return ProfileEvaluator(EikonalConfig(epsilon, delta), make_state(**kw))


@pytest.fixture(scope="session")
def bump_state():
    return make_state()


@pytest.fixture(scope="session")
def zero_state():
    return make_state(amplitude=0.0)


@pytest.fixture(scope="session")
def ev():
    return make_evaluator()


@pytest.fixture(scope="session")
def ev_zero():
    return make_evaluator(amplitude=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        parts = log[n]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
