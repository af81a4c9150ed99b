"""Append-only JSONL run logs.

Line 1 is a ``run_start`` header (run id, creation time, settings snapshot). Every
following line is an event ``{"seq": n, "type": ..., ...}`` with no wall-clock data,
so two runs of the same configuration under mock backends produce identical event
lines. Each event is flushed and synced before the pipeline moves on.
"""
from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

log = logging.getLogger(__name__)

LOG_NAME = "run.jsonl"
EVENT_TYPES = ("stage1_done", "iteration", "memory_append", "final")
CHECKPOINTS = ("stage1_done", "iteration")
_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


class CorruptLog(ValueError):
    pass


class EmptyRun(ValueError):
    pass


def new_run_id() -> str:
    """26-character sortable id: 48-bit millisecond time then 80 random bits."""
    value = (int(time.time() * 1000) << 80) | int.from_bytes(os.urandom(10), "big")
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 31])
        value >>= 5
    return "".join(reversed(chars))


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RunLog:
    def __init__(self, path: Path, next_seq: int = 0):
        self.path = Path(path)
        self.seq = next_seq
        self.finalized = False

    @classmethod
    def create(cls, run_dir: Path, header: Dict[str, Any]) -> "RunLog":
        path = Path(run_dir) / LOG_NAME
        if path.exists():
            raise FileExistsError(f"{path} already exists; use --resume or another --out")
        path.parent.mkdir(parents=True, exist_ok=True)
        head = {"type": "run_start", "run_id": new_run_id(), "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
        head.update(header)
        cls._write(path, head)
        return cls(path)

    @staticmethod
    def _write(path: Path, record: Dict[str, Any]) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(dumps(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def event(self, kind: str, payload: Dict[str, Any]) -> None:
        if kind not in EVENT_TYPES:
            raise ValueError(f"unknown event type {kind!r}")
        if self.finalized:
            raise ValueError("run already has a final event")
        record = {"seq": self.seq, "type": kind}
        record.update(payload)
        self._write(self.path, record)
        self.seq += 1
        if kind == "final":
            self.finalized = True


def read_log(path: Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]], int]:
    """(header, events, byte length of the intact part).

    A truncated final line is dropped with a warning; any other unreadable line,
    a missing header or out-of-order sequence numbers raise CorruptLog.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CorruptLog(f"no run log at {path}") from None
    lines = raw.split(b"\n")
    records: List[Dict[str, Any]] = []
    intact = 0
    for i, line in enumerate(lines):
        if not line.strip():
            intact += len(line) + (1 if i < len(lines) - 1 else 0)
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("not an object")
        except ValueError:
            rest = [l for l in lines[i + 1:] if l.strip()]
            if rest:
                raise CorruptLog(f"{path}: unreadable line {i + 1}") from None
            log.warning("%s: dropping truncated trailing line %d", path, i + 1)
            break
        if i == len(lines) - 1:
            # complete JSON but no newline: treat as written
            intact += len(line)
        else:
            intact += len(line) + 1
        records.append(rec)
    if not records or records[0].get("type") != "run_start":
        raise CorruptLog(f"{path}: missing run_start header")
    header, events = records[0], records[1:]
    for n, ev in enumerate(events):
        if ev.get("seq") != n or ev.get("type") not in EVENT_TYPES:
            raise CorruptLog(f"{path}: event {n} out of order or of unknown type")
    finals = [e for e in events if e["type"] == "final"]
    if len(finals) > 1 or (finals and events[-1]["type"] != "final"):
        raise CorruptLog(f"{path}: misplaced final event")
    return header, events, intact


def resume_point(run_dir: Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]], Optional[Dict[str, Any]], bool]:
    """(header, kept events, last checkpoint event or None, finalized).

    Events after the last checkpoint are cut from the file, so a resumed run rewrites
    them exactly as an uninterrupted run would.
    """
    path = Path(run_dir) / LOG_NAME
    header, events, intact = read_log(path)
    if events and events[-1]["type"] == "final":
        return header, events, None, True
    last = max((i for i, e in enumerate(events) if e["type"] in CHECKPOINTS), default=None)
    kept = events[: last + 1] if last is not None else []
    text = dumps(header) + "\n" + "".join(dumps(e) + "\n" for e in kept)
    if path.read_bytes() != text.encode("utf-8"):
        path.write_text(text, encoding="utf-8")
    return header, kept, kept[-1] if kept else None, False


def trajectory_lines(run_dir: Path) -> List[str]:
    """The event lines of a run log (everything after the header), verbatim."""
    lines = (Path(run_dir) / LOG_NAME).read_text(encoding="utf-8").splitlines()
    return lines[1:]


def iteration_events(run_dir: Path) -> List[Dict[str, Any]]:
    _, events, _ = read_log(Path(run_dir) / LOG_NAME)
    its = [e for e in events if e["type"] == "iteration"]
    if not its:
        raise EmptyRun(f"{run_dir}: the run log has no iteration events")
    return its
