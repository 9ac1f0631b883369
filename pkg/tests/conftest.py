import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from modeguard.corpus import load_corpus  # noqa: E402
from modeguard.missions import generate_missions  # noqa: E402
from modeguard.pipeline import analyze_firmware  # noqa: E402

CORPUS_SEED = 0
FRESH_SEED = 1


@pytest.fixture(scope="session")
def toycopter():
    return load_corpus("toycopter")


@pytest.fixture(scope="session")
def rover():
    return load_corpus("aionrover")


@pytest.fixture(scope="session")
def copter_missions(toycopter):
    return generate_missions(toycopter, 40, CORPUS_SEED)


@pytest.fixture(scope="session")
def rover_missions(rover):
    return generate_missions(rover, 40, CORPUS_SEED)


@pytest.fixture(scope="session")
def copter(toycopter, copter_missions):
    """Every analysis artifact for toycopter over its 40-mission corpus."""
    return analyze_firmware(toycopter, copter_missions, "toycopter")


@pytest.fixture(scope="session")
def rover_art(rover, rover_missions):
    return analyze_firmware(rover, rover_missions, "aionrover")
