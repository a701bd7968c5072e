import numpy as np
import pytest

from rtinterp.core import IntervalSequence, SplineConfig
from rtinterp.policy import MyopicParams, ParametrizedParams, init_rnn


def random_sequence(rng, n, eps_range=(0.05, 0.5), gap_range=(0.2, 2.0), zero_eps=False):
    x = np.concatenate([[rng.uniform(-5, 5)], rng.uniform(*gap_range, n - 1)]).cumsum()
    y = np.cumsum(rng.normal(scale=0.5, size=n))
    eps = np.zeros(n) if zero_eps else rng.uniform(*eps_range, n)
    return IntervalSequence.from_arrays(x, y, eps)


def random_params(kind, cfg, rng):
    if kind == "myopic":
        return MyopicParams()
    if kind == "parametrized":
        return ParametrizedParams(rng.normal(scale=0.5), rng.uniform(-0.5, 1.5), rng.uniform(-4, 0))
    return init_rnn(cfg, rng, hidden_size=8, input_size=8, lambda_raw=rng.uniform(-3, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[SplineConfig(3, 1), SplineConfig(3, 2), SplineConfig(4, 2), SplineConfig(5, 1)],
                ids=lambda c: f"d{c.d}phi{c.phi}")
def cfg(request):
    return request.param


# acceptance criteria report one line each; collected here and printed after the run
ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
