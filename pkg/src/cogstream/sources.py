"""Random-access byte sources: local files, HTTP range endpoints, and a
latency/bandwidth/rate-limit simulated object store.

Every source records its requests in a :class:`RangeLog`; the logs are the
evidence base for the concurrency and I/O-amplification assertions made by
the benchmark suite. Handles never cache: N identical reads produce N
requests.
"""

import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import requests

from .errors import (
    HttpStatusError,
    NotFound,
    ProtocolError,
    RangeOutOfBounds,
    RequestTimeout,
    RetriesExhausted,
)

RETRY_BACKOFFS_MS = (100, 200, 400)


@dataclass(frozen=True)
class SourceProfile:
    """Simulated object-store behavior.

    latency_ms is charged per request; bandwidth_cap (bytes/s, 0 =
    unlimited) is shared across all handles of one store; max_concurrent
    (0 = unlimited) is a global in-flight ceiling with FIFO queueing.
    Replay-deterministic for a fixed seed and request schedule.
    """

    latency_ms: float = 164.0
    jitter_ms: float = 0.0
    bandwidth_cap: int = 0
    max_concurrent: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be >= 0")
        if self.bandwidth_cap < 0 or self.max_concurrent < 0:
            raise ValueError("bandwidth_cap and max_concurrent must be >= 0")


# Cross-region profile measured by the benchmark environment this models.
PAPER_PROFILE = SourceProfile(latency_ms=164.0)
# Desk-scale profile so full suites finish quickly.
FAST_PROFILE = SourceProfile(latency_ms=10.0)


@dataclass
class RangeRecord:
    offset: int
    length: int
    issued_at: float
    completed_at: float
    tag: str = ""
    note: str = "ok"
    applied_delay_ms: float = 0.0  # simulated sources: the latency charged


class RangeLog:
    """Thread-safe append-only request log."""

    def __init__(self):
        self._records: List[RangeRecord] = []
        self._lock = threading.Lock()

    def append(self, record: RangeRecord) -> None:
        with self._lock:
            self._records.append(record)

    def snapshot(self) -> List[RangeRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def max_overlap(self, tag_prefix: str = "") -> int:
        """Peak number of simultaneously in-flight requests (optionally
        restricted to tags with the given prefix)."""
        events = []
        for r in self.snapshot():
            if r.tag.startswith(tag_prefix):
                events.append((r.issued_at, 1))
                events.append((r.completed_at, -1))
        events.sort()
        peak = cur = 0
        for _, delta in events:
            cur += delta
            peak = max(peak, cur)
        return peak


class _FifoSlots:
    """Concurrency ceiling with FIFO admission."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._cond = threading.Condition()
        self._active = 0
        self._queue: deque = deque()
        self._next_ticket = 0

    def acquire(self) -> None:
        with self._cond:
            ticket = self._next_ticket
            self._next_ticket += 1
            self._queue.append(ticket)
            while self._active >= self.capacity or self._queue[0] != ticket:
                self._cond.wait()
            self._queue.popleft()
            self._active += 1

    def release(self) -> None:
        with self._cond:
            self._active -= 1
            self._cond.notify_all()


class Shaper:
    """Applies a SourceProfile across concurrent callers: per-request
    latency (+seeded jitter), a FIFO concurrency ceiling, and a shared
    bandwidth clock."""

    def __init__(self, profile: SourceProfile):
        self.profile = profile
        self._slots = (
            _FifoSlots(profile.max_concurrent) if profile.max_concurrent else None
        )
        self._rng = random.Random(profile.seed)
        self._rng_lock = threading.Lock()
        self._bw_lock = threading.Lock()
        self._bw_free_at = 0.0

    def acquire(self) -> None:
        if self._slots:
            self._slots.acquire()

    def release(self) -> None:
        if self._slots:
            self._slots.release()

    def delay(self) -> float:
        """Sleep one request's latency; returns the milliseconds charged."""
        ms = self.profile.latency_ms
        if self.profile.jitter_ms:
            with self._rng_lock:
                ms += self._rng.uniform(0.0, self.profile.jitter_ms)
        if ms > 0:
            time.sleep(ms / 1000.0)
        return ms

    def throttle(self, nbytes: int) -> None:
        cap = self.profile.bandwidth_cap
        if not cap:
            return
        with self._bw_lock:
            now = time.monotonic()
            start = max(now, self._bw_free_at)
            self._bw_free_at = start + nbytes / cap
            target = self._bw_free_at
        wait = target - time.monotonic()
        if wait > 0:
            time.sleep(wait)


class ByteSource:
    """Random-access reads over one object. Handles are independent (no
    shared cursor) and safe for concurrent get_range calls."""

    def __init__(self, log: Optional[RangeLog] = None, tag: str = ""):
        self.log = log if log is not None else RangeLog()
        self.tag = tag

    def get_range(self, offset: int, length: int) -> bytes:
        raise NotImplementedError

    def size(self) -> int:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_bounds(self, offset: int, length: int, total: int) -> None:
        if offset < 0 or length <= 0 or offset + length > total:
            raise RangeOutOfBounds(
                f"range [{offset}, {offset + length}) outside object of "
                f"{total} bytes"
            )


class LocalSource(ByteSource):
    """Disk-backed source; positional reads, no artificial delay."""

    def __init__(self, path, tag: str = ""):
        super().__init__(tag=tag)
        self.path = str(path)
        try:
            self._fd = os.open(self.path, os.O_RDONLY)
        except FileNotFoundError as exc:
            raise NotFound(self.path) from exc
        self._size = os.fstat(self._fd).st_size

    def get_range(self, offset: int, length: int) -> bytes:
        self._check_bounds(offset, length, self._size)
        t0 = time.monotonic()
        data = os.pread(self._fd, length, offset)
        self.log.append(
            RangeRecord(offset, length, t0, time.monotonic(), self.tag)
        )
        return data

    def size(self) -> int:
        return self._size

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None


def open_local(path) -> LocalSource:
    return LocalSource(path)


class BytesSource(ByteSource):
    """In-memory source; handy for freshly written file bytes."""

    def __init__(self, data: bytes, tag: str = ""):
        super().__init__(tag=tag)
        self._data = data

    def get_range(self, offset: int, length: int) -> bytes:
        self._check_bounds(offset, length, len(self._data))
        t0 = time.monotonic()
        chunk = self._data[offset:offset + length]
        self.log.append(
            RangeRecord(offset, length, t0, time.monotonic(), self.tag)
        )
        return chunk

    def size(self) -> int:
        return len(self._data)


class SimulatedStore:
    """Factory for simulated sources sharing one traffic shaper and one
    request log, modeling a single remote service behind many handles."""

    def __init__(self, profile: SourceProfile):
        self.profile = profile
        self.shaper = Shaper(profile)
        self.log = RangeLog()

    def open(self, path, tag: str = "") -> "SimulatedSource":
        return SimulatedSource(self, path, tag=tag)


class SimulatedSource(ByteSource):
    """Local file served through the store's latency/bandwidth model."""

    def __init__(self, store: SimulatedStore, path, tag: str = ""):
        super().__init__(log=store.log, tag=tag)
        self.store = store
        self.path = str(path)
        try:
            self._fd = os.open(self.path, os.O_RDONLY)
        except FileNotFoundError as exc:
            raise NotFound(self.path) from exc
        self._size = os.fstat(self._fd).st_size

    def get_range(self, offset: int, length: int) -> bytes:
        self._check_bounds(offset, length, self._size)
        shaper = self.store.shaper
        shaper.acquire()
        try:
            t_issue = time.monotonic()
            charged_ms = shaper.delay()
            data = os.pread(self._fd, length, offset)
            shaper.throttle(length)
        finally:
            shaper.release()
        self.log.append(
            RangeRecord(offset, length, t_issue, time.monotonic(), self.tag,
                        applied_delay_ms=charged_ms)
        )
        return data

    def size(self) -> int:
        return self._size

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None


def open_simulated(path, profile: SourceProfile) -> SimulatedSource:
    """Single-handle convenience wrapper around a private store."""
    return SimulatedStore(profile).open(path)


class RemoteSource(ByteSource):
    """HTTP range-request client. One GET per get_range (no caching),
    bounded retries with exponential backoff on transient failures."""

    def __init__(self, url: str, tag: str = "", timeout: float = 30.0,
                 retries: int = len(RETRY_BACKOFFS_MS)):
        super().__init__(tag=tag)
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()
        self._size: Optional[int] = None

    def get_range(self, offset: int, length: int) -> bytes:
        if offset < 0 or length <= 0:
            raise RangeOutOfBounds(f"bad range [{offset}, {offset + length})")
        headers = {
            "Range": f"bytes={offset}-{offset + length - 1}",
            "Cache-Control": "no-cache",
        }
        last_note = ""
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(RETRY_BACKOFFS_MS[min(attempt - 1,
                           len(RETRY_BACKOFFS_MS) - 1)] / 1000.0)
            t_issue = time.monotonic()
            try:
                resp = self._session.get(
                    self.url, headers=headers, timeout=self.timeout
                )
            except requests.Timeout:
                last_note = "timeout"
                self._log(offset, length, t_issue, last_note)
                continue
            except requests.ConnectionError as exc:
                last_note = f"connection: {exc.__class__.__name__}"
                self._log(offset, length, t_issue, last_note)
                continue
            status = resp.status_code
            if status == 206:
                data = resp.content
                self._log(offset, length, t_issue, "ok")
                if len(data) != length:
                    raise ProtocolError(
                        f"server returned {len(data)} bytes for a "
                        f"{length}-byte range"
                    )
                self._remember_size(resp)
                return data
            if status == 200:
                self._log(offset, length, t_issue, "http-200")
                raise ProtocolError(
                    "server ignored Range header (200 with full body)"
                )
            if status == 416:
                self._log(offset, length, t_issue, "http-416")
                raise RangeOutOfBounds(
                    f"range [{offset}, {offset + length}) unsatisfiable"
                )
            if status == 404:
                self._log(offset, length, t_issue, "http-404")
                raise NotFound(self.url)
            if status >= 500:
                last_note = f"http-{status}"
                self._log(offset, length, t_issue, last_note)
                continue
            self._log(offset, length, t_issue, f"http-{status}")
            raise HttpStatusError(status)
        if last_note == "timeout":
            raise RequestTimeout(
                f"{self.url}: timed out on all {self.retries + 1} attempts"
            )
        raise RetriesExhausted(
            f"{self.url}: gave up after {self.retries + 1} attempts "
            f"(last: {last_note})"
        )

    def _log(self, offset, length, t_issue, note):
        self.log.append(
            RangeRecord(offset, length, t_issue, time.monotonic(),
                        self.tag, note)
        )

    def _remember_size(self, resp) -> None:
        if self._size is None:
            content_range = resp.headers.get("Content-Range", "")
            if "/" in content_range:
                total = content_range.rsplit("/", 1)[1]
                if total.isdigit():
                    self._size = int(total)

    def size(self) -> int:
        if self._size is None:
            resp = self._session.head(self.url, timeout=self.timeout)
            if resp.status_code == 404:
                raise NotFound(self.url)
            size = resp.headers.get("Content-Length")
            if resp.status_code != 200 or size is None:
                raise ProtocolError(
                    f"cannot determine size of {self.url} "
                    f"(HEAD -> {resp.status_code})"
                )
            self._size = int(size)
        return self._size

    def close(self) -> None:
        self._session.close()


def open_remote(url: str, **kwargs) -> RemoteSource:
    return RemoteSource(url, **kwargs)
