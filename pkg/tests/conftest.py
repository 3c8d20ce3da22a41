import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import example_model  # noqa: E402


@pytest.fixture
def model():
    return example_model()
