import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
REPO_ROOT = TESTS_DIR.parent
THERMO_FIXTURES = REPO_ROOT / "fixtures" / "thermo"

sys.path.insert(0, str(TESTS_DIR))  # make tests/oracles.py importable


@pytest.fixture(scope="session")
def thermo_dir() -> Path:
    return THERMO_FIXTURES


@pytest.fixture(scope="session")
def golden_artifact_dir() -> Path:
    return TESTS_DIR / "golden" / "thermo_artifact"


@pytest.fixture()
def thermo_fixtures(thermo_dir):
    from iotforge.fixtures import FixtureSet

    return FixtureSet(thermo_dir)


@pytest.fixture()
def thermo_config(thermo_dir, tmp_path):
    from iotforge.config import load_config

    def make(**overrides):
        base = {"fixtures_dir": str(thermo_dir), "out_dir": str(tmp_path / "out")}
        base.update(overrides)
        return load_config(None, base)

    return make
