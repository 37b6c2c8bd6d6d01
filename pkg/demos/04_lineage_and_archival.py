#!/usr/bin/env python3
"""Lineage graphs survive deletion: data goes away, provenance stays.

Builds a three-stage pipeline (raw -> normalized -> report), walks the
graph both directions, deletes the middle instance, and shows that the
trace - and every metadata facet - still answers from the archive.
"""

import tempfile
from pathlib import Path

from tablevault import Repository, TabularData, default_registry, register_builtin

work = Path(tempfile.mkdtemp(prefix="tv-demo-"))
repo = Repository(work / "repo", author="alice")

repo.create_table("raw")
repo.create_instance("raw", external=True)
repo.write_instance(
    TabularData(columns=[("city", "string"), ("temp_f", "int")],
                rows=[["oslo", 31], ["cairo", 95]]),
    "raw",
    description="scraped weather",
)

registry = default_registry()
register_builtin(registry, "demo", "to_celsius", lambda temp: round((temp - 32) * 5 / 9))
register_builtin(registry, "demo", "label", lambda c: "cold" if c < 10 else "warm")

INDEX = """\
builder_type: 'IndexBuilder'
changed_columns: ['city']
primary_key: ['city']
python_function: 'create_data_table_from_table'
code_module: 'table_generation'
arguments:
    folder_dir: '<<{src}.city>>'
"""

repo.create_table("normalized")
repo.create_instance("normalized")
repo.create_builder_file("normalized", "index").write_text(INDEX.format(src="raw"))
repo.create_builder_file("normalized", "temp-c").write_text("""\
builder_type: 'ColumnBuilder'
changed_columns: ['temp_c']
python_function: 'to_celsius'
code_module: 'demo'
dtypes:
  temp_c: 'int'
arguments:
    temp: '<<raw.temp_f[city::<<self.city[self.index]>>]>>'
""")
norm = repo.execute_instance("normalized", registry=registry)

repo.create_table("report")
repo.create_instance("report")
repo.create_builder_file("report", "index").write_text(INDEX.format(src="normalized"))
repo.create_builder_file("report", "verdict").write_text("""\
builder_type: 'ColumnBuilder'
changed_columns: ['verdict']
python_function: 'label'
code_module: 'demo'
arguments:
    c: '<<normalized.temp_c[city::<<self.city[self.index]>>]>>'
""")
rep = repo.execute_instance("report", registry=registry)

print("report:", repo.get_dataframe("report").rows, "\n")

raw_id = repo.latest_committed("raw")
down = repo.trace_lineage("raw", raw_id, direction="downstream")
print(f"downstream of raw@{raw_id[:15]}...:")
for edge in down["edges"]:
    print(f"   {edge['from']['table']} -> {edge['to']['table']}  [{edge['sink_slot']}]")

up = repo.trace_lineage("report", rep, direction="upstream")
print(f"\nupstream of report@{rep[:15]}...: "
      f"{sorted({n['table'] for n in up['nodes']})}")

print("\ndeleting the normalized instance (data gone, metadata archived)...")
repo.delete_instance("normalized", norm)

up_after = repo.trace_lineage("report", rep, direction="upstream")
flags = {n["table"]: n["archived"] for n in up_after["nodes"]}
print(f"upstream after deletion: {flags}")

builders = repo.query_metadata("normalized", "builders", instance_id=norm, archived=True)
print(f"archived builder documents still readable: {sorted(builders)}")
try:
    repo.get_dataframe("normalized", norm)
except Exception as exc:
    print(f"dataframe, as expected, is gone: {type(exc).__name__}")
repo.close()
