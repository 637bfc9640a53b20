"""Append-only JSON-lines event log (one UTF-8 event per LF-terminated line)."""

from __future__ import annotations

import json
import os
from pathlib import Path

from ..errors import CorruptLogError
from ..state import EventRecord, MeshState, replay as fold


class EventLog:
    def __init__(self, path: Path | str):
        self.path = Path(path)

    def read(self) -> list[EventRecord]:
        if not self.path.exists():
            return []
        out: list[EventRecord] = []
        with self.path.open("r", encoding="utf-8", newline="\n") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.endswith("\n"):
                    raise CorruptLogError("truncated final event", len(out) + 1)
                try:
                    ev = EventRecord.from_dict(json.loads(line))
                except (ValueError, KeyError, TypeError):
                    raise CorruptLogError(f"unreadable event on line {lineno}", len(out) + 1) from None
                expected = out[-1].seq + 1 if out else 1
                if ev.seq != expected:
                    raise CorruptLogError(f"sequence gap: expected {expected}, found {ev.seq}", ev.seq)
                out.append(ev)
        return out

    def append(self, ev: EventRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8", newline="\n") as fh:
            fh.write(ev.to_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def replay(events: EventLog | list[EventRecord]) -> MeshState:
    """Rebuild state from a log; a gap or bad event raises with its sequence number."""
    records = events.read() if isinstance(events, EventLog) else list(events)
    return fold(records)
