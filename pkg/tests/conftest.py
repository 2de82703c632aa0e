import warnings

import pytest
from hypothesis import HealthCheck, settings

from rcmlab import environment as env

settings.register_profile("rcm", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rcm")


def full_field(d, L, boundary="periodic", value=1.0):
    box = env.LatticeBox(d, L, boundary)
    return env.generate_iid(box, env.MarginalSpec.constant(value), 0)


def bern(d, L, p, seed, boundary="periodic"):
    return env.generate_iid(env.LatticeBox(d, L, boundary), env.MarginalSpec.bernoulli(p), seed)


@pytest.fixture
def no_regime_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", env.OutsideRegimeWarning)
        yield


ACCEPTANCE = {}


def verdict(k, ok, detail=""):
    """Record and print the outcome of acceptance criterion ``k``, then assert it."""
    line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE[k] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
