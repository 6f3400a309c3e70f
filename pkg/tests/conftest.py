import numpy as np
import pytest

from swipt_tfs.core import ChannelGains, ProblemInstance, QosRequirements, SystemParams, dbm_to_watt


def small_instance(seed: int, K: int = 2, N: int = 2, rate_frac: float = 0.3, energy_frac: float = 0.2,
                   loose: bool = False) -> ProblemInstance:
    """Random instance at moderate SNR with targets scaled to what the channel supports.

    ``loose`` draws targets small enough that they rarely bind.
    """
    rng = np.random.default_rng(seed)
    params = SystemParams(K, N, 1e6, dbm_to_watt(-174.0), dbm_to_watt(10.0), 0.5)
    g = rng.exponential(1.0, (K, N)) * 10 ** rng.uniform(-9, -7, (K, 1))
    scale_r = 0.05 if loose else 1.0
    scale_e = 0.05 if loose else 1.0
    R = rng.uniform(0, rate_frac * scale_r, K) * params.rate_constant
    E = rng.uniform(0, energy_frac * scale_e, K) * params.efficiency * params.max_power * g.min()
    if K == 1:
        E = np.zeros(K)
    return ProblemInstance(params, QosRequirements(R, E), ChannelGains(g))


@pytest.fixture
def tiny():
    return small_instance(7)


ACCEPTANCE_LINES: list = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"CRITERION {number} {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
