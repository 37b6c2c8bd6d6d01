"""Filesystem primitives: atomic writes, fsync discipline, digests, docs.

Durability contract used across the package: a file is written to a
temporary sibling, fsynced, renamed into place, and the parent directory
is fsynced. With ``fsync=False`` the same sequence runs without the sync
calls (used by tests that do not exercise crash behavior).
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import shutil
from pathlib import Path
from typing import Any, Iterator

import yaml

FORMAT_VERSION = 1


def ensure_dir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)


def fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def atomic_write_bytes(path: Path, data: bytes, fsync: bool = True) -> None:
    ensure_dir(path.parent)
    tmp = path.parent / f".tmp-{secrets.token_hex(4)}-{path.name}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        if fsync:
            fh.flush()
            os.fsync(fh.fileno())
    os.replace(tmp, path)
    if fsync:
        fsync_dir(path.parent)


def append_line(path: Path, line: str, fsync: bool = True) -> None:
    """Single O_APPEND write of one newline-terminated record."""
    ensure_dir(path.parent)
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, (line.rstrip("\n") + "\n").encode("utf-8"))
        if fsync:
            os.fsync(fd)
    finally:
        os.close(fd)


def read_lines(path: Path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except FileNotFoundError:
        return []


def read_jsonl(path: Path, skip_torn: bool = True) -> list[dict]:
    """Parse a JSON-lines file; a torn final line is skipped, not fatal."""
    records = []
    lines = read_lines(path)
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if skip_torn and i == len(lines) - 1:
                continue
            raise
    return records


def dump_json_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write_yaml(path: Path, doc: dict, fsync: bool = True) -> None:
    body = yaml.safe_dump(doc, sort_keys=True, allow_unicode=True)
    atomic_write_bytes(path, body.encode("utf-8"), fsync=fsync)


def read_yaml(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def yaml_bytes(doc: dict) -> bytes:
    return yaml.safe_dump(doc, sort_keys=True, allow_unicode=True).encode("utf-8")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def link_or_copy(src: Path, dst: Path) -> None:
    """Hard link when the filesystem allows it, byte copy otherwise."""
    ensure_dir(dst.parent)
    try:
        os.link(src, dst)
    except OSError:
        shutil.copy2(src, dst)


def walk_files(root: Path) -> Iterator[Path]:
    """All regular files under root, in sorted, deterministic order."""
    if not root.exists():
        return
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            yield Path(dirpath) / name


def walk_dirs(root: Path) -> Iterator[Path]:
    if not root.exists():
        return
    for dirpath, dirnames, _ in os.walk(root):
        dirnames.sort()
        for name in dirnames:
            yield Path(dirpath) / name


def tree_digest(root: Path, subdirs: list[str] | None = None) -> str:
    """Hash of (relative path, content) over a directory tree.

    ``subdirs`` restricts the walk to the named children of root; order is
    deterministic so equal trees hash equal.
    """
    h = hashlib.sha256()
    roots = [root / s for s in subdirs] if subdirs else [root]
    for base in roots:
        for path in walk_files(base):
            rel = path.relative_to(root).as_posix()
            h.update(rel.encode("utf-8"))
            h.update(b"\0")
            h.update(sha256_file(path).encode("ascii"))
            h.update(b"\n")
    return h.hexdigest()
