"""Document storage addressed only by primary key.

The cache keeps embeddings in memory and pushes request/response payloads
out to a :class:`DocumentStore`. Backends expose ``put``/``fetch``/``delete``
and nothing else: there is deliberately no search operation.

File backend layout: one append-only log of frames
``[length: u32 LE][crc32: u32 LE][payload]`` where the payload is the JSON
form of a :class:`DocumentRecord` with base64 bodies. Deletes append a
tombstone frame ``{"doc_id": ..., "deleted": true}``. On open the log is
scanned once to rebuild the key -> offset map; a torn or corrupt tail is
truncated.
"""

from __future__ import annotations

import base64
import itertools
import json
import logging
import os
import struct
import threading
import time
import zlib
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import DocNotFound, StorageError, UsageError

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<II")


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    request_body: bytes
    response_body: bytes
    stored_at: int  # ms since epoch (or since simulation start)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "request_body": base64.b64encode(self.request_body).decode("ascii"),
            "response_body": base64.b64encode(self.response_body).decode("ascii"),
            "stored_at": self.stored_at,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DocumentRecord":
        return cls(
            doc_id=data["doc_id"],
            request_body=base64.b64decode(data["request_body"]),
            response_body=base64.b64decode(data["response_body"]),
            stored_at=int(data["stored_at"]),
        )


@dataclass(frozen=True)
class BackendLatencyModel:
    fetch_latency: float = 5.0  # ms
    put_latency: float = 5.0  # ms

    def __post_init__(self):
        if self.fetch_latency < 0 or self.put_latency < 0:
            raise UsageError("latencies must be >= 0")


class LatencyMeter:
    """Accumulates simulated milliseconds charged by cache components."""

    def __init__(self) -> None:
        self.elapsed_ms = 0.0

    def charge(self, ms: float) -> None:
        self.elapsed_ms += ms


class DocumentStore(ABC):
    """Key-value contract every backend implements.

    ``calls`` counts operations by name so callers (and tests) can assert
    which paths touched storage.
    """

    fetch_cost_ms: float = 0.0

    def __init__(self) -> None:
        self.calls: Counter = Counter()

    @abstractmethod
    def put(self, record: DocumentRecord) -> str:
        """Store ``record`` and return its doc id.

        ``record.doc_id`` is ignored; the store assigns a fresh id.
        """

    @abstractmethod
    def fetch(self, doc_id: str) -> DocumentRecord:
        """Return the record or raise :class:`DocNotFound`."""

    @abstractmethod
    def delete(self, doc_id: str) -> None:
        """Remove ``doc_id``; deleting an unknown id is a no-op."""

    @abstractmethod
    def __len__(self) -> int: ...

    @abstractmethod
    def ids(self) -> list[str]: ...

    def new_record(self, request_body: bytes, response_body: bytes, stored_at: int) -> DocumentRecord:
        return DocumentRecord("", bytes(request_body), bytes(response_body), int(stored_at))

    def close(self) -> None:
        pass


class SimulatedDocStore(DocumentStore):
    """In-memory store that charges a fixed latency per put/fetch to a meter."""

    def __init__(self, latency: BackendLatencyModel = BackendLatencyModel(),
                 meter: Optional[LatencyMeter] = None):
        super().__init__()
        self.latency = latency
        self.meter = meter if meter is not None else LatencyMeter()
        self._docs: dict[str, DocumentRecord] = {}
        self._seq = itertools.count()
        self._lock = threading.Lock()

    @property
    def fetch_cost_ms(self) -> float:
        return self.latency.fetch_latency

    def put(self, record: DocumentRecord) -> str:
        with self._lock:
            self.calls["put"] += 1
            doc_id = f"doc-{next(self._seq):012d}"
            self._docs[doc_id] = DocumentRecord(doc_id, record.request_body,
                                                record.response_body, record.stored_at)
        self.meter.charge(self.latency.put_latency)
        return doc_id

    def fetch(self, doc_id: str) -> DocumentRecord:
        self.calls["fetch"] += 1
        self.meter.charge(self.latency.fetch_latency)
        try:
            return self._docs[doc_id]
        except KeyError:
            raise DocNotFound(doc_id) from None

    def delete(self, doc_id: str) -> None:
        with self._lock:
            self.calls["delete"] += 1
            self._docs.pop(doc_id, None)

    def __len__(self) -> int:
        return len(self._docs)

    def ids(self) -> list[str]:
        return list(self._docs)


class FileDocStore(DocumentStore):
    """Append-only, checksummed log file with an in-memory offset map."""

    def __init__(self, path, fsync: bool = False):
        super().__init__()
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._offsets: dict[str, int] = {}
        self._seq = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
            self._end = self._recover()
        except OSError as exc:
            raise StorageError(f"cannot open {self.path}: {exc}") from exc

    def _recover(self) -> int:
        size = os.fstat(self._fd).st_size
        pos = 0
        while pos + _HEADER.size <= size:
            length, crc = _HEADER.unpack(os.pread(self._fd, _HEADER.size, pos))
            payload = os.pread(self._fd, length, pos + _HEADER.size)
            if len(payload) < length or zlib.crc32(payload) != crc:
                break
            try:
                data = json.loads(payload)
            except ValueError:
                break
            doc_id = data["doc_id"]
            if data.get("deleted"):
                self._offsets.pop(doc_id, None)
            else:
                self._offsets[doc_id] = pos
            self._seq = max(self._seq, _seq_of(doc_id) + 1)
            pos += _HEADER.size + length
        if pos < size:
            logger.warning("truncating %d trailing bytes of %s", size - pos, self.path)
            os.ftruncate(self._fd, pos)
        return pos

    def _append(self, obj: dict) -> int:
        payload = json.dumps(obj, separators=(",", ":")).encode()
        frame = _HEADER.pack(len(payload), zlib.crc32(payload)) + payload
        pos = self._end
        try:
            os.pwrite(self._fd, frame, pos)
            if self.fsync:
                os.fsync(self._fd)
        except OSError as exc:
            raise StorageError(f"write to {self.path} failed: {exc}") from exc
        self._end = pos + len(frame)
        return pos

    def put(self, record: DocumentRecord) -> str:
        with self._lock:
            self.calls["put"] += 1
            doc_id = f"doc-{self._seq:012d}"
            self._seq += 1
            rec = DocumentRecord(doc_id, record.request_body, record.response_body, record.stored_at)
            self._offsets[doc_id] = self._append(rec.to_json())
            return doc_id

    def fetch(self, doc_id: str) -> DocumentRecord:
        self.calls["fetch"] += 1
        pos = self._offsets.get(doc_id)
        if pos is None:
            raise DocNotFound(doc_id)
        try:
            length, crc = _HEADER.unpack(os.pread(self._fd, _HEADER.size, pos))
            payload = os.pread(self._fd, length, pos + _HEADER.size)
        except OSError as exc:
            raise StorageError(f"read from {self.path} failed: {exc}") from exc
        if zlib.crc32(payload) != crc:
            raise StorageError(f"checksum mismatch for {doc_id}")
        return DocumentRecord.from_json(json.loads(payload))

    def delete(self, doc_id: str) -> None:
        with self._lock:
            self.calls["delete"] += 1
            if doc_id not in self._offsets:
                return
            self._append({"doc_id": doc_id, "deleted": True})
            del self._offsets[doc_id]

    def __len__(self) -> int:
        return len(self._offsets)

    def ids(self) -> list[str]:
        return list(self._offsets)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


def _seq_of(doc_id: str) -> int:
    try:
        return int(doc_id.rsplit("-", 1)[1])
    except (IndexError, ValueError):
        return -1
