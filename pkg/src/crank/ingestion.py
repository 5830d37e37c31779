"""Append-only event log, sessionization and the prior feedback loop."""

from __future__ import annotations

import heapq
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Sequence

from .domain import (
    CarouselId,
    EventParseError,
    EventType,
    InteractionEvent,
    UserId,
    parse_event,
    serialize_event,
)
from .priors import PriorStore

_log = logging.getLogger(__name__)

FoldMode = Literal["closed", "provisional", "raw"]


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionRule:
    gap_seconds: int = 1800

    def __post_init__(self) -> None:
        if not self.gap_seconds > 0:
            raise ValueError("gap_seconds must be > 0")


def sessionize(events: Sequence[InteractionEvent], rule: SessionRule = SessionRule()) -> list[list[InteractionEvent]]:
    """Split one user's time-ordered events into sessions of carousel-level events.

    A new session starts whenever the gap to the previous event exceeds
    ``rule.gap_seconds``. Within a session each (carousel, event type) is
    emitted once, at its first occurrence, without an item.
    """
    sessions: list[list[InteractionEvent]] = []
    last_ts: int | None = None
    seen: set[tuple[CarouselId, EventType]] = set()
    for e in events:
        if last_ts is not None and e.ts < last_ts:
            raise ValueError(f"events not sorted by ts ({e.ts} after {last_ts})")
        if last_ts is None or e.ts - last_ts > rule.gap_seconds:
            sessions.append([])
            seen = set()
        last_ts = e.ts
        key = (e.carousel, e.event)
        if key not in seen:
            seen.add(key)
            sessions[-1].append(InteractionEvent(e.user, e.carousel, e.event, e.ts))
    return sessions


class EventLog:
    """Append-only JSONL event log; the offset of a record is its line index."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._starts: list[int] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._scan()
        self._fh = open(self.path, "ab")

    def _scan(self) -> None:
        pos = 0
        with open(self.path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    # torn final write from a crash; drop it
                    _log.warning("truncating partial record at byte %d of %s", pos, self.path)
                    with open(self.path, "r+b") as w:
                        w.truncate(pos)
                    break
                self._starts.append(pos)
                pos += len(line)
        self._end = pos

    def __len__(self) -> int:
        return len(self._starts)

    def append_raw(self, line: str) -> int:
        data = line.rstrip("\n").encode("utf-8") + b"\n"
        with self._lock:
            self._fh.write(data)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            offset = len(self._starts)
            self._starts.append(self._end)
            self._end += len(data)
        return offset

    def append(self, e: InteractionEvent) -> int:
        return self.append_raw(serialize_event(e))

    def read(self, start: int = 0, stop: int | None = None) -> Iterator[tuple[int, str]]:
        with self._lock:
            n = len(self._starts)
            stop = n if stop is None else min(stop, n)
            if start >= stop:
                return
            begin = self._starts[start]
            end = self._starts[stop] if stop < n else self._end
        with open(self.path, "rb") as fh:
            fh.seek(begin)
            blob = fh.read(end - begin)
        # split on LF only, matching _scan; a stray CR must not shift offsets
        for offset, raw in enumerate(blob.split(b"\n")[:-1], start):
            yield offset, raw.decode("utf-8", errors="replace")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> EventLog:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_event(log: EventLog, e: InteractionEvent) -> int:
    return log.append(e)


@dataclass
class _UserSession:
    last_ts: int
    seen: set = field(default_factory=set)
    pending: list = field(default_factory=list)


class FeedbackApplier:
    """Folds log records past the checkpoint into a PriorStore.

    ``mode`` controls when per-session deduplicated events reach the store:
    ``"closed"`` waits until the session's gap has elapsed, ``"provisional"``
    applies each (carousel, event type) at its first occurrence in the
    session, and ``"raw"`` applies every event without deduplication. Closed
    and provisional reach the same state once all sessions have closed.
    """

    def __init__(
        self,
        log: EventLog,
        store: PriorStore,
        rule: SessionRule = SessionRule(),
        mode: FoldMode = "closed",
        checkpoint_path: str | Path | None = None,
    ):
        if mode not in ("closed", "provisional", "raw"):
            raise ValueError(f"unknown fold mode {mode!r}")
        self.log = log
        self.store = store
        self.rule = rule
        self.mode = mode
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.offset = 0
        self.warnings = 0
        self.applied = 0
        self._sessions: dict[UserId, _UserSession] = {}
        self._expiry: list[tuple[int, UserId]] = []
        self.watermark: int | None = None
        self._lock = threading.Lock()
        if self.checkpoint_path is not None and self.checkpoint_path.exists():
            self.offset = int(json.loads(self.checkpoint_path.read_text())["offset"])
            if self.offset > len(log):
                raise CheckpointError(
                    f"checkpoint offset {self.offset} beyond log end {len(log)}"
                )

    def _emit(self, e: InteractionEvent) -> None:
        self.store.apply(e.user, e.carousel, e.event)
        self.applied += 1

    def _close(self, sess: _UserSession) -> None:
        for e in sess.pending:
            self._emit(e)
        sess.pending.clear()

    def _ingest(self, e: InteractionEvent) -> None:
        if self.mode == "raw":
            self._emit(e)
            return
        if self.watermark is None or e.ts > self.watermark:
            self.watermark = e.ts
            self._expire(self.watermark)
        sess = self._sessions.get(e.user)
        if sess is None or e.ts - sess.last_ts > self.rule.gap_seconds:
            if sess is not None:
                self._close(sess)
            sess = self._sessions[e.user] = _UserSession(e.ts)
        if e.ts > sess.last_ts:
            sess.last_ts = e.ts
        heapq.heappush(self._expiry, (sess.last_ts, e.user))
        key = (e.carousel, e.event)
        if key in sess.seen:
            return
        sess.seen.add(key)
        if self.mode == "provisional":
            self._emit(e)
        else:
            sess.pending.append(e)

    def _expire(self, now: float) -> None:
        # Sessions idle for longer than the gap, measured in event time, close
        # as soon as the log shows it; this keeps the result independent of
        # how the log is split into apply() calls.
        gap = self.rule.gap_seconds
        heap = self._expiry
        while heap and now - heap[0][0] > gap:
            last_ts, user = heapq.heappop(heap)
            sess = self._sessions.get(user)
            if sess is not None and sess.last_ts == last_ts:
                self._close(self._sessions.pop(user))

    def close_idle(self, now: float) -> None:
        """Fold sessions idle for longer than the gap at wall-clock ``now``."""
        with self._lock:
            self._expire(now)

    def flush(self) -> None:
        """Treat every open session as closed."""
        for sess in self._sessions.values():
            self._close(sess)
        self._sessions.clear()
        self._expiry.clear()

    def apply(self, start: int | None = None) -> int:
        """Apply records from the checkpoint to the current end of the log.

        Returns the number of records consumed. ``start`` below the
        checkpoint is a regression and raises without touching the store.
        """
        with self._lock:
            if start is not None and start != self.offset:
                raise CheckpointError(
                    f"requested start {start} but checkpoint is at {self.offset}"
                )
            consumed = 0
            for offset, line in self.log.read(self.offset):
                try:
                    e = parse_event(line)
                except EventParseError as exc:
                    self.warnings += 1
                    _log.warning("skipping corrupt log record %d: %s", offset, exc)
                else:
                    self._ingest(e)
                self.offset = offset + 1
                consumed += 1
            if consumed:
                self._write_checkpoint()
            return consumed

    def _write_checkpoint(self) -> None:
        if self.checkpoint_path is None:
            return
        tmp = self.checkpoint_path.with_name(self.checkpoint_path.name + ".tmp")
        tmp.write_text(json.dumps({"offset": self.offset}))
        os.replace(tmp, self.checkpoint_path)

    def run(self, interval_s: float, stop: threading.Event) -> None:
        """Apply new records every ``interval_s`` seconds until ``stop`` is set."""
        while not stop.wait(interval_s):
            try:
                self.apply()
            except Exception:  # keep the loop alive; the next tick retries
                _log.exception("feedback application failed")


def apply_feedback(
    log: EventLog,
    store: PriorStore,
    rule: SessionRule = SessionRule(),
    mode: FoldMode = "closed",
    flush: bool = False,
) -> FeedbackApplier:
    """One-shot application of the whole log onto ``store``.

    With ``flush`` the sessions still open at the end of the log are folded too.
    """
    applier = FeedbackApplier(log, store, rule, mode)
    applier.apply()
    if flush:
        applier.flush()
    return applier


def rebuild_priors(
    log: EventLog,
    base: PriorStore,
    rule: SessionRule = SessionRule(),
    mode: FoldMode = "closed",
    flush: bool = False,
) -> PriorStore:
    """Replay the log from offset 0 on a copy of ``base``."""
    store = base.copy()
    apply_feedback(log, store, rule, mode, flush=flush)
    return store
