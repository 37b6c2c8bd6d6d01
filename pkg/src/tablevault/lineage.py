"""Lineage records: assembly, persistence, reverse index, graph traversal.

Every committed instance carries a ``lineage.yaml``:

    format_version: 1
    op_id: <producing operation>
    author_chain: [op_id, author, ..., root human author]
    ingestion: {author, timestamp, description, digest, source_note}   # imports only
    edges:
      - source: {table, instance, columns: [...], pattern: <access pattern>}
        sink_slot: "column:model_response/arg:question"   # or "exec:nthreads"
        fallback: true                                    # only when it applied

Edges always point at instances that were committed when the edge was
created, so the graph over committed instances is a DAG. A downstream
reverse index (one append-only file per source instance) supports
downstream traversal; a full scan of all lineage documents is the
rebuild oracle. Deleting an instance moves its lineage document to the
archive, so traces are identical before and after deletion.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Iterable

from . import _fsio, layout
from .errors import LineageError, NotFound
from .refparse import Dependency

LINEAGE_FILE = "lineage.yaml"


def lineage_paths(root: Path, table: str, instance: str) -> tuple[Path, Path]:
    live = layout.instance_dir(root, table, instance) / LINEAGE_FILE
    archived = layout.archive_instance_dir(root, table, instance) / LINEAGE_FILE
    return live, archived


def read_lineage(root: Path, table: str, instance: str) -> tuple[dict | None, bool]:
    """(document, archived) for an instance's lineage, live copy preferred."""
    live, archived = lineage_paths(root, table, instance)
    if live.exists():
        return _fsio.read_yaml(live), False
    if archived.exists():
        return _fsio.read_yaml(archived), True
    return None, False


def _edge_doc(dep: Dependency, sink_slot: str) -> dict:
    doc = {
        "source": {
            "table": dep.table,
            "instance": dep.resolved_instance,
            "columns": sorted(dep.columns),
            "pattern": dep.pattern.value,
        },
        "sink_slot": sink_slot,
    }
    if dep.fallback:
        doc["fallback"] = True
    return doc


def build_document(
    op_id: str,
    author_chain: list[str],
    edges: Iterable[tuple[Dependency, str]],
    ingestion: dict | None = None,
) -> dict:
    doc: dict[str, Any] = {
        "format_version": _fsio.FORMAT_VERSION,
        "op_id": op_id,
        "author_chain": list(author_chain),
        "edges": sorted(
            (_edge_doc(dep, slot) for dep, slot in edges),
            key=lambda e: (e["sink_slot"], e["source"]["table"], e["source"]["instance"]),
        ),
    }
    if ingestion is not None:
        doc["ingestion"] = ingestion
    return doc


def record_lineage(
    op,
    table: str,
    instance: str,
    edges: list[tuple[Dependency, str]],
    author_chain: list[str],
    ingestion: dict | None,
    is_committed: Callable[[str, str], bool],
) -> dict:
    """Stage lineage.yaml inside the operation and index the new edges.

    Raises LineageError when any edge source is not a committed instance,
    which reverts the enclosing operation.
    """
    for dep, _ in edges:
        if not is_committed(dep.table, dep.resolved_instance):
            raise LineageError(
                f"lineage edge references uncommitted instance "
                f"{dep.table}@{dep.resolved_instance}"
            )
    doc = build_document(op.op_id, author_chain, edges, ingestion)
    rel = f"{layout.TABLES}/{table}/{instance}/{LINEAGE_FILE}"
    op.stage_write(rel, _fsio.yaml_bytes(doc))
    seen = set()
    for dep, _ in edges:
        key = (dep.table, dep.resolved_instance)
        if key in seen:
            continue
        seen.add(key)
        line = _fsio.dump_json_line(
            {
                "consumer_table": table,
                "consumer_instance": instance,
                "op_id": op.op_id,
            }
        )
        op.add_action(
            {
                "kind": "append_once",
                "path": f"{layout.LINEAGE_INDEX}/{dep.table}@{dep.resolved_instance}.jsonl",
                "line": line,
            }
        )
    return doc


# -- traversal ----------------------------------------------------------------


def _instance_known(root: Path, table: str, instance: str) -> bool:
    if (layout.instance_dir(root, table, instance) / "description.yaml").exists():
        return True
    return layout.archive_instance_dir(root, table, instance).exists()


def _is_archived(root: Path, table: str, instance: str) -> bool:
    return not (
        layout.instance_dir(root, table, instance) / "description.yaml"
    ).exists() and layout.archive_instance_dir(root, table, instance).exists()


def _downstream_consumers(root: Path, table: str, instance: str) -> list[tuple[str, str]]:
    path = layout.lineage_index_dir(root) / f"{table}@{instance}.jsonl"
    out = []
    for doc in _fsio.read_jsonl(path):
        out.append((doc["consumer_table"], doc["consumer_instance"]))
    return sorted(set(out))


def scan_reverse_index(root: Path) -> dict[tuple[str, str], set[tuple[str, str]]]:
    """Rebuild the downstream map by scanning every lineage document."""
    reverse: dict[tuple[str, str], set[tuple[str, str]]] = {}
    bases = [layout.tables_dir(root), root / layout.ARCHIVE]
    for base in bases:
        if not base.exists():
            continue
        for path in _fsio.walk_files(base):
            if path.name != LINEAGE_FILE:
                continue
            rel = path.relative_to(base)
            if len(rel.parts) != 3:
                continue
            table, instance = rel.parts[0], rel.parts[1]
            doc = _fsio.read_yaml(path)
            for edge in doc.get("edges", []):
                src = (edge["source"]["table"], edge["source"]["instance"])
                reverse.setdefault(src, set()).add((table, instance))
    return reverse


def trace(
    root: Path,
    table: str,
    instance: str,
    direction: str = "upstream",
    depth: int | None = None,
) -> dict:
    """BFS over lineage edges; archived nodes are included and flagged."""
    if direction not in ("upstream", "downstream"):
        raise ValueError(f"direction must be upstream or downstream, got {direction!r}")
    if not _instance_known(root, table, instance):
        raise NotFound(f"unknown instance {table}@{instance}")
    limit = depth if depth is not None else 1_000_000
    nodes: dict[tuple[str, str], dict] = {}
    edges: list[dict] = []
    seen_edges: set[tuple] = set()
    frontier = [(table, instance, 0)]
    while frontier:
        t, i, d = frontier.pop(0)
        if (t, i) in nodes:
            continue
        nodes[(t, i)] = {
            "table": t,
            "instance": i,
            "archived": _is_archived(root, t, i),
        }
        if d >= limit:
            continue
        if direction == "upstream":
            doc, _ = read_lineage(root, t, i)
            for edge in (doc or {}).get("edges", []):
                src = (edge["source"]["table"], edge["source"]["instance"])
                key = (src, (t, i), edge["sink_slot"])
                if key not in seen_edges:
                    seen_edges.add(key)
                    edges.append(
                        {
                            "from": {"table": src[0], "instance": src[1]},
                            "to": {"table": t, "instance": i},
                            "sink_slot": edge["sink_slot"],
                            "columns": edge["source"].get("columns", []),
                            "pattern": edge["source"].get("pattern"),
                        }
                    )
                frontier.append((src[0], src[1], d + 1))
        else:
            for ct, ci in _downstream_consumers(root, t, i):
                doc, _ = read_lineage(root, ct, ci)
                for edge in (doc or {}).get("edges", []):
                    if (edge["source"]["table"], edge["source"]["instance"]) != (t, i):
                        continue
                    key = ((t, i), (ct, ci), edge["sink_slot"])
                    if key in seen_edges:
                        continue
                    seen_edges.add(key)
                    edges.append(
                        {
                            "from": {"table": t, "instance": i},
                            "to": {"table": ct, "instance": ci},
                            "sink_slot": edge["sink_slot"],
                            "columns": edge["source"].get("columns", []),
                            "pattern": edge["source"].get("pattern"),
                        }
                    )
                frontier.append((ct, ci, d + 1))
    return {
        "format_version": _fsio.FORMAT_VERSION,
        "root": {"table": table, "instance": instance},
        "direction": direction,
        "depth": depth,
        "nodes": [nodes[k] for k in sorted(nodes)],
        "edges": edges,
    }
