import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_DIR = Path(os.environ.get("MPDROPOUT_MNIST_DIR", "/root/data/mnist"))


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set MPDROPOUT_MNIST_DIR)")
    return MNIST_DIR


@pytest.fixture(scope="session")
def mnist(mnist_dir):
    from mpdropout.data import load_dataset
    return load_dataset("mnist", mnist_dir)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
