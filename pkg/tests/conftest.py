from pathlib import Path

import numpy as np
import pytest

from ccpa.exitlab import build_convergence_spec
from ccpa.model import ChannelRealization, SystemConfig, gen_static_channel, load_channel_csv

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def static_channel():
    return load_channel_csv(CONFIGS / "static_channel.csv")


@pytest.fixture(scope="session")
def table_spec():
    return build_convergence_spec([0.9999] * 2, [0.7, 0.9], 0.1, 11)


@pytest.fixture(scope="session")
def small_spec():
    return build_convergence_spec([0.9999] * 2, [0.7, 0.9], 0.1, 5)


def random_channel(seed, U=2, N_R=2, N_F=8, N_L=5):
    return gen_static_channel(SystemConfig(U=U, N_R=N_R, N_F=N_F, N_L=min(N_L, N_F)), seed=seed)


def flat_channel(gains, N_F=1):
    """Single-tap channel; ``gains[u]`` lists user u's coefficient per antenna."""
    taps = np.asarray(gains, dtype=complex)
    return ChannelRealization(taps.reshape(taps.shape[0], -1, 1), N_F=N_F)


# one line per acceptance criterion, printed at the end of the session
VERDICTS: list = []


def record_verdict(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
    VERDICTS.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
