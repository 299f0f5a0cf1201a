"""Key-value persistence behind the annotation service.

Values are JSON-serializable dicts. Writes happen inside transactions;
the service serializes all mutating operations through them, while reads
outside a transaction see consistent snapshots.
"""
from __future__ import annotations

import json
import sqlite3
import threading
from contextlib import contextmanager
from typing import Iterator, Optional


class Storage:
    def get(self, key: str) -> Optional[dict]:
        raise NotImplementedError

    def put(self, key: str, value: dict) -> None:
        raise NotImplementedError

    def delete(self, key: str) -> None:
        raise NotImplementedError

    def scan(self, prefix: str) -> Iterator[tuple[str, dict]]:
        """All (key, value) pairs whose key starts with prefix, key-ordered."""
        raise NotImplementedError

    @contextmanager
    def transaction(self):
        raise NotImplementedError

    def close(self) -> None:
        pass


class MemoryStorage(Storage):
    """In-process backend for tests; a coarse lock serializes writers."""

    def __init__(self):
        self._data: dict[str, str] = {}
        self._lock = threading.RLock()

    def get(self, key):
        with self._lock:
            raw = self._data.get(key)
        return json.loads(raw) if raw is not None else None

    def put(self, key, value):
        raw = json.dumps(value, ensure_ascii=False, sort_keys=True)
        with self._lock:
            self._data[key] = raw

    def delete(self, key):
        with self._lock:
            self._data.pop(key, None)

    def scan(self, prefix):
        with self._lock:
            snapshot = [(k, v) for k, v in self._data.items() if k.startswith(prefix)]
        for key, raw in sorted(snapshot):
            yield key, json.loads(raw)

    @contextmanager
    def transaction(self):
        with self._lock:
            yield


class SqliteStorage(Storage):
    """Embedded transactional backend (single shared connection)."""

    def __init__(self, path):
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS kv (key TEXT PRIMARY KEY, value TEXT NOT NULL)"
        )
        self._conn.commit()

    def get(self, key):
        with self._lock:
            row = self._conn.execute(
                "SELECT value FROM kv WHERE key = ?", (key,)
            ).fetchone()
        return json.loads(row[0]) if row else None

    def put(self, key, value):
        raw = json.dumps(value, ensure_ascii=False, sort_keys=True)
        with self._lock:
            self._conn.execute(
                "INSERT INTO kv (key, value) VALUES (?, ?) "
                "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
                (key, raw),
            )
            if not self._conn.in_transaction:
                self._conn.commit()

    def delete(self, key):
        with self._lock:
            self._conn.execute("DELETE FROM kv WHERE key = ?", (key,))
            if not self._conn.in_transaction:
                self._conn.commit()

    def scan(self, prefix):
        with self._lock:
            rows = self._conn.execute(
                "SELECT key, value FROM kv WHERE key >= ? AND key < ? ORDER BY key",
                (prefix, prefix + "￿"),
            ).fetchall()
        for key, raw in rows:
            yield key, json.loads(raw)

    @contextmanager
    def transaction(self):
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield
            except BaseException:
                self._conn.rollback()
                raise
            else:
                self._conn.commit()

    def close(self):
        with self._lock:
            self._conn.close()
