from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=50, derandomize=True)
settings.load_profile("ci")


@pytest.fixture
def datadir() -> Path:
    return Path(__file__).parent / "data"
