"""Shared helpers for the test suite: digests, pipelines, fake views."""

from __future__ import annotations

from pathlib import Path

from tablevault import Repository, TabularData
from tablevault import _fsio, layout
from tablevault.tabular import TabularData as _TD


def state_digest(root: Path) -> str:
    """Digest of data-bearing state without opening a repository handle."""
    return _fsio.tree_digest(Path(root), list(layout.STATE_DIRS))


INDEX_BUILDER_YAML = """\
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

RESPONSE_INDEX_YAML = """\
builder_type: 'IndexBuilder'
changed_columns: ['file_name']
primary_key: ['file_name']
python_function: 'create_data_table_from_table'
code_module: 'table_generation'
is_custom: false
arguments:
    folder_dir: '<<document-store.file_name>>'
"""

RESPONSE_COLUMN_YAML = """\
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

OPENAI_HELPER_SOURCE = """\
def ask_openai(document, question, model):
    file_id = openai.upload(document)
    response = openai.ask(model, question, file_id)
    return response
"""


def seed_parameters(repo: Repository, threads: int = 4) -> str:
    repo.create_table("parameters")
    repo.create_instance("parameters", external=True)
    frame = TabularData(
        columns=[("operation", "string"), ("threads", "int")],
        rows=[["default", threads]],
    )
    return repo.write_instance(frame, "parameters", description="thread budget")


def build_document_store(repo: Repository, stories: Path) -> str:
    repo.create_table("document-store")
    repo.create_instance("document-store")
    repo.create_builder_file("document-store", "document-store-index").write_text(
        INDEX_BUILDER_YAML.format(folder=stories)
    )
    return repo.execute_instance("document-store")


def build_case_study(repo: Repository, stories: Path) -> dict:
    """The document-classification pipeline end to end; returns instance ids."""
    ids: dict[str, str] = {}
    ids["parameters"] = seed_parameters(repo)
    ids["document-store"] = build_document_store(repo, stories)
    repo.create_table("openai-response")
    repo.create_instance("openai-response")
    repo.create_code_module("openai_helper").write_text(OPENAI_HELPER_SOURCE)
    repo.create_builder_file("openai-response", "openai-response-index").write_text(
        RESPONSE_INDEX_YAML
    )
    repo.create_builder_file("openai-response", "response-column").write_text(
        RESPONSE_COLUMN_YAML
    )
    ids["openai-response-v1"] = repo.execute_instance("openai-response")
    return ids


def external_edit(repo: Repository) -> str:
    """The manual-correction flow: edit one cell, re-import with a record."""
    frame = repo.get_dataframe("openai-response")
    col = frame.column_names.index("model_response")
    for row in frame.rows:
        if row[col] == "this is nonfiction":
            row[col] = "nonfiction"
    repo.create_instance("openai-response", external=True)
    return repo.write_instance(
        frame, "openai-response", description="manual format corrections"
    )


class FakeView:
    """In-memory resolver view for oracle tests (no repository needed)."""

    def __init__(self, frames: dict[str, _TD]):
        # one committed instance per table, id "<table>-v1"
        self.frames = {t: f for t, f in frames.items()}

    def latest_committed(self, table):
        return f"{table}-v1" if table in self.frames else None

    def is_committed(self, table, instance):
        return table in self.frames and instance == f"{table}-v1"

    def frame(self, table, instance):
        return self.frames[table]

    def artifact_root(self, table, instance):
        return Path(f"/artifacts/{table}/{instance}")

    def metadata(self, table, instance, facet):
        return {"table": table, "instance": instance, "facet": list(facet)}


# -- seeded AST fuzzer (round-trip oracle) -----------------------------------

from tablevault.refparse import (
    Filter,
    KeywordTerm,
    NestedRef,
    RefExpr,
    ScalarTerm,
    SelfColumnTerm,
    SelfIndexTerm,
    SliceTerm,
)
import random  # noqa: E402

TABLES = ["users", "config", "document-store", "t_x"]
COLUMNS = ["name", "batch_size", "file_name", "c1"]
STRINGS = ["alice", "hello world", "x,y", "it's", 'say "hi"', ""]


def _random_term(rng: random.Random):
    kind = rng.randrange(5)
    if kind == 0:
        return ScalarTerm("int", rng.randint(-99, 99))
    if kind == 1:
        return ScalarTerm("string", rng.choice(STRINGS))
    if kind == 2:
        return SelfIndexTerm(rng.choice([0, 0, 1, -3, 7]))
    if kind == 3:
        return SelfColumnTerm(rng.choice(COLUMNS))
    return KeywordTerm(rng.choice(["artifact_folder", "id"]))


def random_expr(rng: random.Random, depth: int = 0) -> RefExpr:
    table = rng.choice(TABLES + ["self"])
    instance = None
    if table != "self" and rng.random() < 0.2:
        instance = "20240101T000000.000001_ab12cd"
    column = rng.choice(COLUMNS) if rng.random() < 0.5 else None
    if rng.random() < 0.1:
        facet = rng.choice([("description",), ("lineage",), ("builders", "b-1")])
        return RefExpr(table=table, instance=instance, facet=facet)
    filters = []
    for _ in range(rng.randrange(3)):
        key = rng.choice([None, "index", "operation"] + COLUMNS)
        roll = rng.random()
        if roll < 0.25:
            lo = _random_term(rng) if rng.random() < 0.7 else None
            hi = _random_term(rng) if rng.random() < 0.7 else None
            value = SliceTerm(lo, hi)
        elif roll < 0.45 and depth < 3:
            value = NestedRef(random_expr(rng, depth + 1))
        else:
            value = _random_term(rng)
        filters.append(Filter(key, value))
    return RefExpr(table=table, instance=instance, column=column, filters=tuple(filters))


