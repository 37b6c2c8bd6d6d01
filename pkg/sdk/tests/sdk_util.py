"""Helpers for the SDK tests: digests and the scripted pipeline.

The digest walk is implemented here from scratch (paths + bytes over the
data-bearing directories) so the tests depend only on the repository's
on-disk contract, never on the vault's own code.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

STATE_DIRS = ("tables", "code_modules", "metadata/archive")

DOCUMENT_STORE_INDEX = """\
builder_type: 'IndexBuilder'
changed_columns: ['file_name', 'artifact_name']
primary_key: ['file_name']
python_function: 'create_paper_table_from_folder'
code_module: 'table_generation'
is_custom: false
arguments:
    folder_dir: '{folder}'
    artifact_folder: '~artifact_folder~'
dtypes:
  artifact_name: 'artifact_string'
"""

RESPONSE_INDEX = """\
builder_type: 'IndexBuilder'
changed_columns: ['file_name']
primary_key: ['file_name']
python_function: 'create_data_table_from_table'
code_module: 'table_generation'
is_custom: false
arguments:
    folder_dir: '<<document-store.file_name>>'
"""

RESPONSE_COLUMN = """\
builder_type: 'ColumnBuilder'
changed_columns: ['model_response']
python_function: 'ask_openai'
code_module: 'openai_helper'
nthreads: '<<parameters.threads[operation::~id~]>>'
arguments:
    document: '<<document-store.artifact_name[ file_name::<<self.file_name[self.index]>> ]>>'
    question: 'Is the story fiction or non-fiction? Reply with only one word.'
    model: '4o-mini'
"""

HELPER_SOURCE = """\
def ask_openai(document, question, model):
    file_id = openai.upload(document)
    response = openai.ask(model, question, file_id)
    return response
"""


def state_digest(root: str | Path) -> str:
    root = Path(root)
    h = hashlib.sha256()
    for sub in STATE_DIRS:
        base = root / sub
        if not base.exists():
            continue
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames.sort()
            for name in sorted(filenames):
                path = Path(dirpath) / name
                h.update(path.relative_to(root).as_posix().encode())
                h.update(b"\0")
                h.update(hashlib.sha256(path.read_bytes()).hexdigest().encode())
                h.update(b"\n")
    return h.hexdigest()
