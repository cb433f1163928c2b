import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
MNIST = ROOT / "data" / "mnist"

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _ensure_mnist() -> Path:
    if not (MNIST / "train-images-idx3-ubyte").exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "fetch_mnist.py"), "--out", str(MNIST)],
                       check=True)
    return MNIST


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    return _ensure_mnist()


@pytest.fixture(scope="session")
def train_pool(mnist_dir):
    from svglp.data import load_pool
    return load_pool(mnist_dir, "train", 14)


@pytest.fixture(scope="session")
def test_pool(mnist_dir):
    from svglp.data import load_pool
    return load_pool(mnist_dir, "test", 14)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
