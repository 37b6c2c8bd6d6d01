import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def stories(tmp_path):
    folder = tmp_path / "example_stories"
    folder.mkdir()
    (folder / "little_red_riding_hood.pdf").write_text(
        "Once upon a time there lived a little girl with a red riding hood."
    )
    (folder / "titanic.pdf").write_text(
        "NEW YORK, April 16 - The liner sank after striking an iceberg."
    )
    return folder
