"""Read path: chunk-map fetch, readahead, per-chunk replica failover."""

from __future__ import annotations

import threading
from concurrent.futures import Future, ThreadPoolExecutor
from pathlib import Path

from ..chunking import content_address
from ..errors import ChunkUnavailableError, StorageError
from ..names import DatasetName
from .rpc import BenefactorClient, ChunkMapView, ManagerClient


class ReadHandle:
    """Sequential reader over a committed version, prefetching ahead."""

    def __init__(self, view: ChunkMapView, readahead: int = 2):
        self.view = view
        self.readahead = max(1, readahead)
        self._pool = ThreadPoolExecutor(max_workers=self.readahead)
        self._futures: dict[int, Future] = {}
        self._next_prefetch = 0
        self._index = 0
        self._within = 0
        self._conns: dict[str, BenefactorClient] = {}
        self._conn_lock = threading.Lock()
        self._closed = False

    def _connection(self, addr: str) -> BenefactorClient:
        with self._conn_lock:
            client = self._conns.get(addr)
            if client is None:
                client = self._conns[addr] = BenefactorClient(addr, timeout=30.0)
            return client

    def _drop_connection(self, addr: str):
        with self._conn_lock:
            client = self._conns.pop(addr, None)
        if client is not None:
            client.close()

    def _fetch(self, index: int) -> bytes:
        cid, length, holders = self.view.chunks[index]
        failures = []
        for _bid, addr in holders:
            if not addr:
                continue
            try:
                payload = self._connection(addr).get_chunk(cid)
            except (OSError, ConnectionError, StorageError) as exc:
                failures.append(f"{addr}: {exc}")
                self._drop_connection(addr)
                continue
            if len(payload) != length or content_address(payload) != cid:
                failures.append(f"{addr}: integrity mismatch")
                continue
            return payload
        raise ChunkUnavailableError(
            cid.hex(), f"chunk {cid.hex()} unavailable ({'; '.join(failures) or 'no replicas'})"
        )

    def _ensure_prefetch(self):
        while (
            self._next_prefetch < len(self.view.chunks)
            and self._next_prefetch < self._index + self.readahead
        ):
            idx = self._next_prefetch
            self._futures[idx] = self._pool.submit(self._fetch, idx)
            self._next_prefetch += 1

    def read(self, count: int) -> bytes:
        """Up to count bytes in stream order; empty bytes at end of file."""
        out = []
        need = count
        while need > 0 and self._index < len(self.view.chunks):
            self._ensure_prefetch()
            payload = self._futures[self._index].result()
            take = payload[self._within : self._within + need]
            out.append(take)
            need -= len(take)
            self._within += len(take)
            if self._within >= len(payload):
                del self._futures[self._index]
                self._index += 1
                self._within = 0
        return b"".join(out)

    def read_all(self) -> bytes:
        return self.read(self.view.total_bytes + 1)

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._pool.shutdown(wait=False, cancel_futures=True)
        with self._conn_lock:
            for client in self._conns.values():
                client.close()
            self._conns.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_read(
    manager_address: str,
    dataset: DatasetName | str | None = None,
    application: str | None = None,
    node: str | None = None,
    version: int | None = None,
    readahead: int = 2,
) -> ReadHandle:
    """Open the named dataset, a specific folder version, or the latest."""
    with ManagerClient(manager_address) as manager:
        if dataset is not None:
            view = manager.get_map(dataset)
        elif application is not None and version is not None:
            view = manager.get_map_version(application, version)
        elif application is not None:
            view = manager.get_latest(application, node)
        else:
            raise ValueError("need a dataset name or an application")
    return ReadHandle(view, readahead=readahead)


def restart_fetch(
    manager_address: str,
    application: str,
    out_path: str | Path,
    node: str | None = None,
    readahead: int = 2,
) -> tuple[str, int, int]:
    """Materialize the latest surviving version to a local file.

    Returns (rendered name, version, bytes written).
    """
    with ManagerClient(manager_address) as manager:
        view = manager.get_latest(application, node)
    written = 0
    with ReadHandle(view, readahead=readahead) as handle, open(out_path, "wb") as fh:
        while True:
            block = handle.read(8 << 20)
            if not block:
                break
            fh.write(block)
            written += len(block)
    return view.name, view.version, written
