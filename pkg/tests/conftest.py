import numpy as np
import pytest

from hvsim.samplers import ModelId, TrialBatch, source_spins
from hvsim.spin import Axis
from hvsim.streams import CounterStream

ACCEPTANCE_LINES = []


@pytest.fixture
def stream():
    return CounterStream(20240601)


def leaky_trials(a, b, n, seed, bias=0.01, start=0):
    """Adversarial sampler: station A's marginal depends on the remote setting.

    ``P(A=UP) = 1/2 + bias/2`` when ``b < pi`` and ``1/2 - bias/2`` otherwise.
    """
    a, b = Axis(a), Axis(b)
    s = CounterStream(seed)
    src = source_spins(s, start, n)
    shift = bias / 2 if b.theta < np.pi else -bias / 2
    out_a = np.where(s.uniform("leak-A", start, n) < 0.5 + shift, 1, -1).astype(np.int8)
    out_b = np.where(s.uniform("leak-B", start, n) < 0.5, 1, -1).astype(np.int8)
    return TrialBatch(np.arange(start, start + n), np.full(n, a.theta), np.full(n, b.theta),
                      src, out_a, out_b, ModelId.COUPLED)


def coin_trials(a, b, n, seed, start=0):
    """Fair independent coins at both stations."""
    a, b = Axis(a), Axis(b)
    s = CounterStream(seed)
    return TrialBatch(np.arange(start, start + n), np.full(n, a.theta), np.full(n, b.theta),
                      source_spins(s, start, n),
                      np.where(s.uniform("coin-A", start, n) < 0.5, 1, -1).astype(np.int8),
                      np.where(s.uniform("coin-B", start, n) < 0.5, 1, -1).astype(np.int8),
                      ModelId.INDEPENDENT_FLIP)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
