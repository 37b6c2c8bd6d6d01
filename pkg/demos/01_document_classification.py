#!/usr/bin/env python3
"""Walkthrough: classify a folder of documents, then fix one answer by hand.

Builds a repository with three tables:

* ``document-store``   - documents imported from a folder (artifacts + index)
* ``parameters``       - a configuration table read through a reference string
* ``openai-response``  - one model answer per document (offline mock model)

and finishes with the manual-correction flow: the edited dataframe is
re-imported as a new instance whose ingestion event records who changed
what, and why.
"""

import tempfile
from pathlib import Path

from tablevault import Repository, TabularData

work = Path(tempfile.mkdtemp(prefix="tv-demo-"))
stories = work / "example_stories"
stories.mkdir()
(stories / "little_red_riding_hood.pdf").write_text(
    "Once upon a time there lived a little girl with a red riding hood."
)
(stories / "titanic.pdf").write_text(
    "NEW YORK, April 16 - The liner sank after striking an iceberg."
)

tv = Repository(work / "example_repository", author="alice")
print(f"repository at {tv.root}\n")

for name in ["document-store", "openai-response"]:
    tv.create_table(name)
    tv.create_instance(name)

# configuration lives in a table too, so executions can trace it
tv.create_table("parameters")
tv.create_instance("parameters", external=True)
tv.write_instance(
    TabularData(columns=[("operation", "string"), ("threads", "int")], rows=[["default", 4]]),
    "parameters",
    description="thread budget",
)

tv.create_builder_file("document-store", "document-store-index").write_text(f"""\
builder_type: 'IndexBuilder'
changed_columns: ['file_name', 'artifact_name']
primary_key: ['file_name']
python_function: 'create_paper_table_from_folder'
code_module: 'table_generation'
is_custom: false
arguments:
    folder_dir: '{stories}'
    artifact_folder: '~artifact_folder~'
dtypes:
  artifact_name: 'artifact_string'
""")
tv.execute_instance("document-store")
print("document-store:", tv.get_dataframe("document-store").rows)

tv.create_code_module("openai_helper").write_text(
    "def ask_openai(document, question, model):\n"
    "    file_id = openai.upload(document)\n"
    "    return openai.ask(model, question, file_id)\n"
)
tv.create_builder_file("openai-response", "openai-response-index").write_text("""\
builder_type: 'IndexBuilder'
changed_columns: ['file_name']
primary_key: ['file_name']
python_function: 'create_data_table_from_table'
code_module: 'table_generation'
arguments:
    folder_dir: '<<document-store.file_name>>'
""")
tv.create_builder_file("openai-response", "response-column").write_text("""\
builder_type: 'ColumnBuilder'
changed_columns: ['model_response']
python_function: 'ask_openai'
code_module: 'openai_helper'
nthreads: '<<parameters.threads[operation::~id~]>>'
arguments:
    document: '<<document-store.artifact_name[ file_name::<<self.file_name[self.index]>> ]>>'
    question: 'Is the story fiction or non-fiction? Reply with only one word.'
    model: '4o-mini'
""")
v1 = tv.execute_instance("openai-response")

df = tv.get_dataframe("openai-response")
print("\nmodel answers:")
for row in df.rows:
    print("  ", row)

# one answer ignored the requested format; fix it by hand and re-import
col = df.column_names.index("model_response")
for row in df.rows:
    if row[col] == "this is nonfiction":
        row[col] = "nonfiction"
tv.create_instance("openai-response", external=True)
v2 = tv.write_instance(df, "openai-response", description="manual format corrections")

print("\ncorrected:")
for row in tv.get_dataframe("openai-response").rows:
    print("  ", row)

print("\nlineage of the executed instance:")
for edge in tv.query_metadata("openai-response", "lineage", instance_id=v1)["edges"]:
    src = edge["source"]
    print(f"   {edge['sink_slot']:45s} <- {src['table']} ({src['pattern']})")

print("\ningestion record of the manual edit:")
ingestion = tv.query_metadata("openai-response", "ingestion", instance_id=v2)
print(f"   author={ingestion['author']!r} description={ingestion['description']!r}")
print(f"   digest={ingestion['digest'][:16]}...")
tv.close()
