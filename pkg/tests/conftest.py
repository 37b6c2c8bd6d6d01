import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tablevault import Repository


@pytest.fixture
def repo_factory(tmp_path):
    """Repositories with a short lock timeout; handles closed at teardown."""
    handles = []

    def make(name="repo", author="alice", **overrides):
        overrides.setdefault("lock_timeout_s", 5.0)
        repo = Repository(tmp_path / name, author=author, **overrides)
        handles.append(repo)
        return repo

    yield make
    for handle in handles:
        handle.close()


@pytest.fixture
def repo(repo_factory):
    return repo_factory()


@pytest.fixture
def stories(tmp_path):
    """Two small documents: one fairy tale, one news report."""
    folder = tmp_path / "example_stories"
    folder.mkdir()
    (folder / "little_red_riding_hood.pdf").write_text(
        "Once upon a time there lived a little girl with a red riding hood. "
        "A wolf waited for her in the woods."
    )
    (folder / "titanic.pdf").write_text(
        "NEW YORK, April 16 - The liner sank after striking an iceberg; "
        "survivors reached port this morning."
    )
    return folder
