"""In-process content-addressed store with per-operation timing.

Objects are keyed by the SHA-256 digest of their bytes. Every ``add`` and
every successful ``cat`` appends a :class:`StoreTiming` row to the log.
"""
from __future__ import annotations

import enum
import hashlib
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

DIGEST_SIZE = 32


class CasError(Exception):
    pass


class NotFoundError(CasError, KeyError):
    pass


class CollisionError(CasError):
    pass


@dataclass(frozen=True, order=True)
class Cid:
    digest: bytes

    def __post_init__(self):
        if not isinstance(self.digest, bytes) or len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"Cid digest must be {DIGEST_SIZE} bytes")

    @classmethod
    def of(cls, content: bytes) -> "Cid":
        return cls(hashlib.sha256(content).digest())

    @classmethod
    def from_hex(cls, text: str) -> "Cid":
        if len(text) != 2 * DIGEST_SIZE:
            raise ValueError(f"expected {2 * DIGEST_SIZE} hex characters, got {len(text)}")
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self):
        return self.hex

    def __repr__(self):
        return f"Cid({self.hex[:12]}…)"


class OpKind(str, enum.Enum):
    ADD = "Add"
    CAT = "Cat"


@dataclass(frozen=True)
class StoreTiming:
    op_kind: OpKind
    duration_us: float
    payload_len: int
    actor: str


class ContentStore:
    """Thread-safe content-addressed blob store.

    ``latency_us`` adds a fixed simulated delay to every operation. When
    ``clock`` is given it replaces the wall clock (seconds, monotonic); the
    harness passes a zero clock to get reproducible timing files.
    """

    def __init__(self, persist_dir=None, latency_us=0.0, clock=None):
        self._blobs: dict[Cid, bytes] = {}
        self._timings: list[StoreTiming] = []
        self._lock = threading.Lock()
        self.latency_us = float(latency_us)
        self._clock = clock or time.perf_counter
        self.persist_dir = Path(persist_dir) if persist_dir is not None else None
        if self.persist_dir is not None:
            self.persist_dir.mkdir(parents=True, exist_ok=True)

    def _elapsed_us(self, start):
        return max(0.0, (self._clock() - start) * 1e6) + self.latency_us

    def add(self, content: bytes, actor: str) -> Cid:
        if not content:
            raise CasError("refusing to store empty content")
        content = bytes(content)
        start = self._clock()
        cid = Cid.of(content)
        with self._lock:
            existing = self._blobs.get(cid)
            if existing is not None and existing != content:
                raise CollisionError(f"digest collision on {cid.hex}")
            self._blobs[cid] = content
            if self.persist_dir is not None:
                _write_atomic(self.persist_dir / cid.hex, content)
            self._timings.append(
                StoreTiming(OpKind.ADD, self._elapsed_us(start), len(content), actor)
            )
        return cid

    def cat(self, cid: Cid, actor: str) -> bytes:
        start = self._clock()
        with self._lock:
            try:
                content = self._blobs[cid]
            except KeyError:
                raise NotFoundError(cid.hex) from None
            self._timings.append(
                StoreTiming(OpKind.CAT, self._elapsed_us(start), len(content), actor)
            )
        return content

    def __contains__(self, cid):
        with self._lock:
            return cid in self._blobs

    def timings(self) -> list[StoreTiming]:
        with self._lock:
            return list(self._timings)

    def tamper(self, cid: Cid, content: bytes):
        """Overwrite the bytes stored under ``cid`` without re-keying.

        Fault injection only: models a store that serves corrupted data.
        """
        with self._lock:
            if cid not in self._blobs:
                raise NotFoundError(cid.hex)
            self._blobs[cid] = bytes(content)
            if self.persist_dir is not None:
                _write_atomic(self.persist_dir / cid.hex, content)


def _write_atomic(path: Path, content: bytes):
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(content)
    os.replace(tmp, path)


def summarize(timings, op_kind=None, actor=None):
    """Mean and population std of durations (microseconds) for a filtered slice."""
    rows = [
        t.duration_us
        for t in timings
        if (op_kind is None or t.op_kind == op_kind) and (actor is None or t.actor == actor)
    ]
    if not rows:
        return {"count": 0, "mean_us": 0.0, "std_us": 0.0}
    n = len(rows)
    mean = sum(rows) / n
    var = sum((x - mean) ** 2 for x in rows) / n
    return {"count": n, "mean_us": mean, "std_us": var ** 0.5}
