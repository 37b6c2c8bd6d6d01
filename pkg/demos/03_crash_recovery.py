#!/usr/bin/env python3
"""Kill a writer mid-operation and watch recovery restore (or finish) it.

Every mutation runs under a write-ahead log with hard-link backups: a
process that dies before the commit point rolls back to the exact
pre-operation bytes; one that dies after it rolls forward to the exact
committed state. This demo provokes both, using the same fault-injection
hooks the test suite uses (``TABLEVAULT_KILL_AT``).
"""

import os
import subprocess
import sys
import tempfile
import textwrap
from pathlib import Path

from tablevault import Repository, layout
from tablevault import _fsio

work = Path(tempfile.mkdtemp(prefix="tv-demo-"))
repo_path = work / "repo"

repo = Repository(repo_path, author="alice")
repo.create_table("ledger", description="survives crashes")
repo.close()


def digest() -> str:
    return _fsio.tree_digest(repo_path, list(layout.STATE_DIRS))


child = work / "writer.py"
child.write_text(
    textwrap.dedent(
        """
        import sys
        from tablevault import Repository
        repo = Repository(sys.argv[1], author="alice")
        repo.create_table("newtable", description="may not survive")
        repo.close()
        """
    )
)


def crash_at(label: str) -> None:
    before = digest()
    env = dict(os.environ, TABLEVAULT_KILL_AT=label, TABLEVAULT_STALE_HEARTBEAT_S="0")
    proc = subprocess.run([sys.executable, str(child), str(repo_path)], env=env,
                          capture_output=True)
    print(f"\nkilled writer at {label!r} (exit {proc.returncode})")
    survivor = Repository(repo_path, author="operator", stale_heartbeat_s=0.0)
    report = survivor.last_recovery
    for entry in report.entries:
        print(f"  recovery: {entry.op_id} -> {entry.disposition}")
    for holder in report.removed_locks:
        print(f"  recovery: reaped orphan locks of {holder}")
    after = digest()
    print(f"  state digest {'unchanged (rolled back)' if after == before else 'advanced (rolled forward)'}")
    print(f"  tables now: {survivor.list_tables()}")
    if "newtable" in survivor.list_tables():
        survivor.delete_table("newtable")
    survivor.close()


print(f"repository at {repo_path}")
print(f"initial tables: ['ledger']")

# die after locks are held but before anything was written
crash_at("begin:wal:1")
# die after the table description was staged but before the commit point
crash_at("stage:finalize:1")
# die after the commit point: recovery completes the operation instead
crash_at("commit:post_point:1")
