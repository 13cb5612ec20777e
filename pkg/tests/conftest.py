from pathlib import Path

import pytest

from pathlora.studies import probe_path

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def planted_cfg_path():
    return ROOT / "configs" / "planted.cfg"


@pytest.fixture(scope="session")
def default_path():
    """Gradient path of the default 16-32-8 tanh probe net (seed 3)."""
    return probe_path(3)
