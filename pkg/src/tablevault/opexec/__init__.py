"""Durable operation engine: locking, write-ahead logging, recovery."""

from . import wal
from .locks import (
    EXCLUSIVE,
    SHARED,
    HeartbeatDaemon,
    LockManager,
    conflicts,
    instance_target,
    module_target,
    process_tag,
    table_target,
    touch_heartbeat,
)
from .operation import (
    Operation,
    PauseRequested,
    StopRequested,
    adopt,
    author_chain,
    begin,
    event_exists,
    list_active,
    log_event,
    log_event_once,
    mark_resumed,
    pause,
    read_events,
    read_record,
    request_stop,
    write_record,
)
from .recovery import RecoveryReport, recover

__all__ = [
    "EXCLUSIVE",
    "SHARED",
    "HeartbeatDaemon",
    "LockManager",
    "Operation",
    "PauseRequested",
    "RecoveryReport",
    "StopRequested",
    "adopt",
    "author_chain",
    "begin",
    "conflicts",
    "event_exists",
    "instance_target",
    "list_active",
    "log_event",
    "log_event_once",
    "mark_resumed",
    "module_target",
    "pause",
    "process_tag",
    "read_events",
    "read_record",
    "recover",
    "request_stop",
    "table_target",
    "touch_heartbeat",
    "wal",
    "write_record",
]
