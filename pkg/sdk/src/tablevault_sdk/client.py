"""TableVault client: every effect flows through one CLI invocation.

The client never reads or writes repository files directly; the
``tablevault`` command line is the single source of truth. Dataframes
cross the boundary in the CLI's JSON frame schema and are surfaced as
pandas DataFrames.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import pandas as pd

from .errors import SdkError, error_for

_DTYPE_TO_PANDAS = {
    "int": "int64",
    "float": "float64",
    "bool": "bool",
    "string": "object",
    "artifact_string": "object",
}


def frame_doc_to_dataframe(doc: dict) -> pd.DataFrame:
    """JSON frame schema -> pandas (helper; get_dataframe already returns this)."""
    names = [c["name"] for c in doc["columns"]]
    df = pd.DataFrame(doc["rows"], columns=names)
    for column in doc["columns"]:
        pandas_dtype = _DTYPE_TO_PANDAS[column["dtype"]]
        df[column["name"]] = df[column["name"]].astype(pandas_dtype)
    df.attrs["tablevault_dtypes"] = {c["name"]: c["dtype"] for c in doc["columns"]}
    df.attrs["tablevault_primary_key"] = list(doc.get("primary_key") or [])
    return df


def _render_csv(df: pd.DataFrame, schema: dict) -> str:
    """CSV in the vault's cell dialect (lowercase bools, repr floats)."""
    import csv
    import io

    def render(value, dtype):
        if dtype == "bool":
            return "true" if value else "false"
        if dtype == "int":
            return str(int(value))
        if dtype == "float":
            return repr(float(value))
        return str(value)

    columns = schema["columns"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([c["name"] for c in columns])
    for row in df.itertuples(index=False, name=None):
        writer.writerow([render(v, c["dtype"]) for v, c in zip(row, columns)])
    return buf.getvalue()


def dataframe_to_schema(df: pd.DataFrame, dtypes: dict | None = None) -> dict:
    """Column dtypes for an import, explicit overrides winning over inference."""
    recorded = df.attrs.get("tablevault_dtypes", {})
    columns = []
    for name in df.columns:
        if dtypes and name in dtypes:
            dtype = dtypes[name]
        elif name in recorded:
            dtype = recorded[name]
        else:
            kind = df[name].dtype.kind
            dtype = {"i": "int", "u": "int", "f": "float", "b": "bool"}.get(kind, "string")
        columns.append({"name": str(name), "dtype": dtype})
    primary_key = df.attrs.get("tablevault_primary_key") or []
    return {"format_version": 1, "columns": columns, "primary_key": list(primary_key)}


class TableVault:
    """Handle to a repository; one author identity per handle.

    The constructor opens the repository, creating it when absent. A
    custom ``cli`` argv prefix may be supplied; the default runs the
    installed ``tablevault`` package in the current interpreter.
    """

    def __init__(self, repo: str | Path, author: str, cli: list[str] | None = None):
        self.repo = str(repo)
        self.author = author
        self.cli = list(cli) if cli else [sys.executable, "-m", "tablevault"]
        self._invoke("init")

    # -- plumbing ------------------------------------------------------------

    def _invoke(self, *args: str) -> dict:
        cmd = [*self.cli, "--repo", self.repo, "--author", self.author, "--json", *args]
        proc = subprocess.run(cmd, capture_output=True)
        stdout = proc.stdout.decode("utf-8", "replace").strip()
        try:
            doc = json.loads(stdout.splitlines()[-1]) if stdout else {}
        except json.JSONDecodeError:
            doc = {}
        if proc.returncode == 0:
            return doc
        error = doc.get("error") or {}
        detail = error.get("detail") or proc.stderr.decode("utf-8", "replace").strip()
        raise error_for(proc.returncode, error.get("kind", "internal"), detail)

    # -- repository API --------------------------------------------------------

    def create_table(self, name: str, description: str = "") -> str:
        doc = self._invoke("table", "create", name, "--description", description)
        return doc["table"]

    def create_instance(self, table_name: str, external: bool = False) -> str:
        args = ["instance", "create", table_name]
        if external:
            args.append("--external")
        return self._invoke(*args)["instance_id"]

    def create_builder_file(self, table_name: str, builder_name: str) -> Path:
        return Path(self._invoke("builder", "create", table_name, builder_name)["path"])

    def create_code_module(self, name: str) -> Path:
        return Path(self._invoke("module", "create", name)["path"])

    def execute_instance(self, table_name: str) -> str:
        doc = self._invoke("execute", table_name)
        if doc.get("state") == "paused":
            raise SdkError(
                f"execution paused: {doc.get('reason', '')}", kind="paused", exit_code=0
            )
        return doc["instance_id"]

    def get_dataframe(self, table_name: str, instance_id: str | None = None) -> pd.DataFrame:
        args = ["df", "get", table_name]
        if instance_id:
            args += ["--instance", instance_id]
        return frame_doc_to_dataframe(self._invoke(*args))

    def write_instance(
        self,
        df: pd.DataFrame,
        table_name: str,
        description: str = "",
        artifacts: str | Path | None = None,
        dtypes: dict | None = None,
    ) -> str:
        schema = dataframe_to_schema(df, dtypes)
        with tempfile.TemporaryDirectory(prefix="tvsdk-") as tmp:
            csv_path = Path(tmp) / "frame.csv"
            csv_path.write_text(_render_csv(df, schema), encoding="utf-8")
            schema_path = Path(tmp) / "schema.yaml"
            schema_path.write_text(json.dumps(schema), encoding="utf-8")
            args = [
                "write",
                table_name,
                "--csv",
                str(csv_path),
                "--schema",
                str(schema_path),
                "--description",
                description,
            ]
            if artifacts:
                args += ["--artifacts", str(artifacts)]
            return self._invoke(*args)["instance_id"]
