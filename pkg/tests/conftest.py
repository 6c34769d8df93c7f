import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsma_cran.metrics import PrecoderSet
from rsma_cran.netmodel import ChannelState

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_channel(rng, B, K, L, scale=1.0):
    h = (rng.standard_normal((B, K, L)) + 1j * rng.standard_normal((B, K, L))) * scale
    return ChannelState(h)


def random_precoders(rng, K, dim, scale=1.0):
    def draw():
        return (rng.standard_normal((K, dim)) + 1j * rng.standard_normal((K, dim))) * scale
    return PrecoderSet(draw(), draw())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
