import time
from pathlib import Path

import numpy as np
import pytest

from scanreg.config import load_config
from scanreg.evaluation import make_base_surface, synth_generate
from scanreg.multiview import register_all

ROOT = Path(__file__).resolve().parents[1]
SYNTHETIC_CONFIG = ROOT / "configs" / "synthetic.json"

RING_SCANS = 6
RING_OVERLAP = 0.6
RING_NOISE = 5e-4
RING_SEED = 0

# filled by the acceptance tests, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def synthetic_config():
    return load_config(SYNTHETIC_CONFIG, environ={})


@pytest.fixture(scope="session")
def base_surface():
    return make_base_surface(20000, seed=0)


@pytest.fixture(scope="session")
def ring(base_surface):
    return synth_generate(base_surface, RING_SCANS, RING_OVERLAP, RING_NOISE, RING_SEED)


@pytest.fixture(scope="session")
def ring_run(ring, synthetic_config):
    """The 6-scan ring registered once, with its wall time."""
    scans, _ = ring
    t0 = time.perf_counter()
    result = register_all(scans, synthetic_config.to_multiview())
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def scan_pair(base_surface):
    """Two scans sharing about 60% of their extent."""
    return synth_generate(base_surface, 2, 0.6, RING_NOISE, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
