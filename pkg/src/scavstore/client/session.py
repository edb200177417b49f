"""Write sessions: the three checkpoint write protocols.

complete_local spools everything to one temp file and uploads at close;
incremental rotates temp files at temp_file_limit and uploads sealed files
while the application keeps writing; sliding_window streams chunks straight
out of a bounded memory buffer and never touches local disk.

Common pipeline: application bytes are coalesced into chunks (fixed size, or
content-defined when dedup=cbch), optionally filtered against chunks the
store already holds, then striped round-robin over the session's benefactors
with one uploader thread per stripe member. Stored chunks are reported to
the manager as the session goes, so GC shields them and other writers can
dedup against them; close commits the chunk-map, which is when readers see
the version.
"""

from __future__ import annotations

import os
import queue
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..chunking import CbchParams, ContentChunker, content_address
from ..errors import StorageError, UnavailableError, UsageError
from ..names import DatasetName
from .rpc import BenefactorClient, ManagerClient

PROTOCOLS = ("complete_local", "incremental", "sliding_window")
DEDUP_MODES = ("off", "fsch", "cbch")

_REPORT_BATCH = 32
_LOOKUP_BATCH = 8
_POLL = 0.05


@dataclass
class WritePolicy:
    protocol: str = "sliding_window"
    semantics: str = "optimistic"
    stripe_width: int = 4
    chunk_size: int = 1 << 20
    replication: int = 1
    buffer_bytes: int = 64 << 20
    temp_file_limit: int = 16 << 20
    dedup: str = "off"
    cbch_params: CbchParams | None = None
    pessimistic_timeout: float = 60.0
    on_replication_timeout: str = "fail"  # or "degrade"
    spool_dir: str | None = None
    initial_reserve: int = 64 << 20

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise UsageError(f"unknown protocol {self.protocol!r}")
        if self.semantics not in ("optimistic", "pessimistic"):
            raise UsageError(f"unknown semantics {self.semantics!r}")
        if self.dedup not in DEDUP_MODES:
            raise UsageError(f"unknown dedup mode {self.dedup!r}")
        if self.stripe_width < 1 or self.replication < 1:
            raise UsageError("stripe_width and replication must be >= 1")
        if self.protocol == "sliding_window" and self.buffer_bytes < 2 * self.chunk_size:
            raise UsageError("sliding window buffer must hold at least two chunks")
        if self.dedup == "cbch" and self.cbch_params is None:
            self.cbch_params = CbchParams()


@dataclass
class TransferMetrics:
    bytes_logical: int = 0
    bytes_uploaded: int = 0
    local_spool_bytes: int = 0
    opened_at: float = 0.0
    close_returned_at: float = 0.0
    fully_stored_at: float | None = None

    @property
    def oab(self) -> float:
        span = self.close_returned_at - self.opened_at
        return self.bytes_logical / span if span > 0 else 0.0

    @property
    def asb(self) -> float:
        if self.fully_stored_at is None:
            return 0.0
        span = self.fully_stored_at - self.opened_at
        return self.bytes_logical / span if span > 0 else 0.0


class _Member:
    def __init__(self, bid: str, addr: str):
        self.bid = bid
        self.addr = addr
        self.client: BenefactorClient | None = None
        self.queue: queue.Queue = queue.Queue()
        self.thread: threading.Thread | None = None
        self.stored: list[tuple[bytes, int]] = []
        self.sentineled = False

    def connect(self):
        if self.client is None:
            self.client = BenefactorClient(self.addr, timeout=30.0)
        return self.client

    def reset_connection(self):
        if self.client is not None:
            self.client.close()
            self.client = None


class WriteSession:
    def __init__(
        self,
        manager_address: str,
        dataset: DatasetName | str,
        policy: WritePolicy | None = None,
        client_id: str | None = None,
    ):
        self.dataset = (
            dataset if isinstance(dataset, DatasetName) else DatasetName.parse(dataset)
        )
        self.policy = policy or WritePolicy()
        self.client_id = client_id or f"client-{uuid.uuid4().hex[:8]}"
        self.state = "open"
        self.metrics = TransferMetrics()
        self.dedup_degraded = False
        self.version: int | None = None
        self._manager = ManagerClient(manager_address)
        self._manager_address = manager_address
        self._lock = threading.Lock()
        self._space = threading.Condition(self._lock)
        self._buffered = 0
        self._error: BaseException | None = None
        self._members: list[_Member] = []
        self._used_bids: set[str] = set()
        self._rids: list[str] = []
        self._reserved = 0
        self._accepted = 0
        self._upload_seq = 0
        self._map_entries: list[tuple[bytes, int]] = []
        self._placements: dict[bytes, set[str]] = {}
        self._pending_report: list[tuple[bytes, int, str]] = []
        self._last_store_ack = 0.0
        self._pending_chunks: list[tuple[bytes, bytes]] = []  # awaiting dedup filter
        self._fixed_pending = bytearray()
        self._cbch: ContentChunker | None = (
            ContentChunker(self.policy.cbch_params) if self.policy.dedup == "cbch" else None
        )
        self._spool_path: Path | None = None
        self._spool_fh = None
        self._sealed: queue.Queue = queue.Queue()
        self._uploader: threading.Thread | None = None

        self.metrics.opened_at = time.monotonic()
        rid, members = self._manager.reserve(
            self.client_id, self.policy.initial_reserve, self.policy.stripe_width
        )
        self._rids.append(rid)
        self._reserved = self.policy.initial_reserve
        for bid, addr, _share in members:
            self._add_member(bid, addr)
        if self.policy.protocol in ("complete_local", "incremental"):
            self._open_spool()
        if self.policy.protocol == "incremental":
            self._uploader = threading.Thread(target=self._consume_sealed, daemon=True)
            self._uploader.start()

    # -- stripe members ---------------------------------------------------------

    def _add_member(self, bid: str, addr: str) -> _Member:
        member = _Member(bid, addr)
        self._used_bids.add(bid)
        member.thread = threading.Thread(
            target=self._member_loop, args=(member,), daemon=True
        )
        member.thread.start()
        self._members.append(member)
        return member

    def _member_loop(self, member: _Member):
        while True:
            item = member.queue.get()
            if item is None:
                return
            cid, payload = item
            try:
                self._put_with_retry(member, cid, payload)
            except BaseException as exc:  # noqa: BLE001 - handled as member death
                self._handle_member_failure(member, (cid, payload), exc)
                return  # this member never serves again

    def _put_with_retry(self, member: _Member, cid: bytes, payload: bytes):
        try:
            member.connect().put_chunk(cid, payload)
        except (OSError, ConnectionError):
            member.reset_connection()
            member.connect().put_chunk(cid, payload)
        now = time.monotonic()
        with self._lock:
            member.stored.append((cid, len(payload)))
            self._placements.setdefault(cid, set()).add(member.bid)
            self._pending_report.append((cid, len(payload), member.bid))
            self._buffered -= len(payload)
            self._last_store_ack = max(self._last_store_ack, now)
            self.metrics.bytes_uploaded += len(payload)
            report = None
            if len(self._pending_report) >= _REPORT_BATCH:
                report = self._pending_report
                self._pending_report = []
            self._space.notify_all()
        if report:
            self._manager.record_upload(self._rids[0], report)

    def _handle_member_failure(self, member: _Member, item, exc):
        """Replace a dead stripe member; reassigns its queued chunks."""
        with self._lock:
            if member in self._members:
                self._members.remove(member)
            leftovers = [item]
            try:
                while True:
                    queued = member.queue.get_nowait()
                    if queued is not None:
                        leftovers.append(queued)
            except queue.Empty:
                pass
            exclude = tuple(self._used_bids)
        try:
            rid, members = self._manager.reserve(
                self.client_id,
                max(self.policy.initial_reserve, sum(len(p) for _, p in leftovers)),
                1,
                exclude=exclude,
            )
        except (OSError, StorageError):
            with self._lock:
                self._error = UnavailableError(
                    f"stripe member {member.bid} died and no replacement exists: {exc}"
                )
                self._space.notify_all()
            return
        self._rids.append(rid)
        bid, addr, _ = members[0]
        with self._lock:
            replacement = self._add_member(bid, addr)
            for queued in leftovers:
                replacement.queue.put(queued)

    # -- ingest pipeline ----------------------------------------------------------

    def write(self, data) -> int:
        if self.state != "open":
            raise UsageError(f"write on a {self.state} session")
        self._raise_if_failed()
        data = memoryview(data).cast("B")
        self.metrics.bytes_logical += len(data)
        self._accepted += len(data)
        if self._accepted > self._reserved * 0.8:
            self._manager.extend_reservation(self._rids[0], self.policy.initial_reserve)
            self._reserved += self.policy.initial_reserve
        if self.policy.protocol == "sliding_window":
            self._ingest(data)
        else:
            self._spool(data)
        return len(data)

    def _spool(self, data: memoryview):
        self._spool_fh.write(data)
        self.metrics.local_spool_bytes += len(data)
        if (
            self.policy.protocol == "incremental"
            and self._spool_fh.tell() >= self.policy.temp_file_limit
        ):
            self._seal_spool()
            self._open_spool()

    def _open_spool(self):
        directory = self.policy.spool_dir or tempfile.gettempdir()
        fd, path = tempfile.mkstemp(prefix="scavstore-spool-", dir=directory)
        self._spool_fh = os.fdopen(fd, "wb")
        self._spool_path = Path(path)

    def _seal_spool(self):
        self._spool_fh.close()
        self._sealed.put(self._spool_path)
        self._spool_fh = None
        self._spool_path = None

    def _consume_sealed(self):
        while True:
            path = self._sealed.get()
            if path is None:
                return
            try:
                with open(path, "rb") as fh:
                    while True:
                        block = fh.read(self.policy.chunk_size)
                        if not block:
                            break
                        self._ingest(memoryview(block))
            except BaseException as exc:  # noqa: BLE001
                with self._lock:
                    self._error = exc
                    self._space.notify_all()
                return
            finally:
                try:
                    os.unlink(path)
                except OSError:
                    pass

    def _ingest(self, data: memoryview):
        """Coalesce into chunks and hand them to the dedup filter."""
        if self._cbch is not None:
            for _offset, payload in self._cbch.feed(data):
                self._queue_chunk(payload)
            return
        size = self.policy.chunk_size
        pos = 0
        while pos < len(data):
            take = min(size - len(self._fixed_pending), len(data) - pos)
            self._fixed_pending += data[pos : pos + take]
            pos += take
            if len(self._fixed_pending) == size:
                self._queue_chunk(bytes(self._fixed_pending))
                self._fixed_pending.clear()

    def _queue_chunk(self, payload: bytes):
        self._raise_if_failed()
        with self._space:
            if self.policy.protocol == "sliding_window":
                while (
                    self._buffered + len(payload) > self.policy.buffer_bytes
                    and self._error is None
                ):
                    self._space.wait(1.0)
                self._raise_if_failed_locked()
            self._buffered += len(payload)
        cid = content_address(payload)
        self._map_entries.append((cid, len(payload)))
        self._pending_chunks.append((cid, payload))
        if len(self._pending_chunks) >= _LOOKUP_BATCH:
            self._flush_dedup()

    def _flush_dedup(self):
        batch = self._pending_chunks
        self._pending_chunks = []
        if not batch:
            return
        skip: set[bytes] = set()
        if self.policy.dedup != "off":
            with self._lock:
                already = {cid for cid, _ in batch if cid in self._placements}
            pending = {cid for cid, _, _ in self._pending_report}
            candidates = [
                cid for cid, _ in batch if cid not in already and cid not in pending
            ]
            known: dict = {}
            if candidates:
                try:
                    known = self._manager.lookup_chunks(candidates)
                except (OSError, StorageError):
                    self.dedup_degraded = True  # upload everything instead
                    known = {}
            skip = already | pending | set(known)
        uploaded_cids = set()
        for cid, payload in batch:
            if cid in skip or cid in uploaded_cids:
                with self._space:
                    self._buffered -= len(payload)
                    self._space.notify_all()
                continue
            uploaded_cids.add(cid)
            with self._lock:
                self._raise_if_failed_locked()
                member = self._members[self._upload_seq % len(self._members)]
                self._upload_seq += 1
                member.queue.put((cid, payload))

    def _raise_if_failed(self):
        with self._lock:
            self._raise_if_failed_locked()

    def _raise_if_failed_locked(self):
        if self._error is not None:
            self.state = "failed"
            raise UnavailableError(f"session failed: {self._error}")

    # -- close -------------------------------------------------------------------

    def close_commit(self) -> tuple[int, TransferMetrics]:
        if self.state != "open":
            raise UsageError(f"close on a {self.state} session")
        self.state = "closing"
        try:
            version = self._close_inner()
        except BaseException:
            self.state = "failed"
            self._release_all()
            self._manager.close()
            raise
        self.state = "committed"
        self.version = version
        if self.metrics.fully_stored_at is not None:
            self._manager.close()
        return version, self.metrics

    def _close_inner(self) -> int:
        if self.policy.protocol == "complete_local":
            self._seal_spool()
            self._sealed.put(None)
            self._consume_sealed_inline()
        elif self.policy.protocol == "incremental":
            self._seal_spool()
            self._sealed.put(None)
            self._uploader.join()
        if self._cbch is not None:
            for _offset, payload in self._cbch.finish():
                self._queue_chunk(payload)
        elif self._fixed_pending:
            self._queue_chunk(bytes(self._fixed_pending))
            self._fixed_pending.clear()
        self._flush_dedup()
        while True:
            with self._lock:
                pending = [m for m in self._members if not m.sentineled]
                for m in pending:
                    m.sentineled = True
            if not pending:
                break
            for m in pending:
                m.queue.put(None)
            for m in pending:
                m.thread.join()
        self._raise_if_failed()
        if self._pending_report:
            self._manager.record_upload(self._rids[0], self._pending_report)
            self._pending_report = []
        version = self._manager.commit_map(
            self.dataset, self._map_entries, self._rids[0], self.policy.replication
        )
        for rid in self._rids[1:]:
            try:
                self._manager.release_reservation(rid)
            except StorageError:
                pass
        storage_done = max(self._last_store_ack, time.monotonic())
        if self.policy.replication <= 1:
            self.metrics.close_returned_at = time.monotonic()
            self.metrics.fully_stored_at = max(storage_done, self.metrics.close_returned_at)
        elif self.policy.semantics == "pessimistic":
            self._await_replication(version, self.policy.pessimistic_timeout)
            self.metrics.close_returned_at = time.monotonic()
            if self.metrics.fully_stored_at is not None:
                self.metrics.fully_stored_at = self.metrics.close_returned_at
        else:
            self.metrics.close_returned_at = time.monotonic()  # replication continues
        for member in self._members:
            member.reset_connection()
        return version

    def _consume_sealed_inline(self):
        path = self._sealed.get()
        while path is not None:
            with open(path, "rb") as fh:
                while True:
                    block = fh.read(self.policy.chunk_size)
                    if not block:
                        break
                    self._ingest(memoryview(block))
            os.unlink(path)
            path = self._sealed.get()

    def _await_replication(self, version: int, timeout: float):
        deadline = time.monotonic() + timeout
        while True:
            view = self._manager.get_map_version(self.dataset.application, version)
            if view.replication_state == "satisfied":
                self.metrics.fully_stored_at = time.monotonic()
                return
            if time.monotonic() >= deadline:
                if self.policy.on_replication_timeout == "degrade":
                    return  # behave like an optimistic close from here on
                raise UnavailableError(
                    f"version {version} committed but replication target "
                    f"{self.policy.replication} not reached within {timeout:.0f}s"
                )
            time.sleep(_POLL)

    def await_fully_stored(self, timeout: float = 60.0) -> TransferMetrics:
        """For optimistic sessions with replication > 1: wait until background
        replication reaches the target and stamp fully_stored_at."""
        if self.version is None:
            raise UsageError("session not committed")
        if self.metrics.fully_stored_at is None:
            self._await_replication(self.version, timeout)
            if self.metrics.fully_stored_at is None:  # degrade mode fell through
                raise UnavailableError("replication target not reached")
            self._manager.close()
        return self.metrics

    def _release_all(self):
        for rid in self._rids:
            try:
                self._manager.release_reservation(rid)
            except (OSError, StorageError):
                pass
        for member in self._members:
            member.queue.put(None)
            member.reset_connection()
        if self._spool_fh is not None:
            self._spool_fh.close()
            try:
                os.unlink(self._spool_path)
            except OSError:
                pass

    def abort(self):
        """Abandon the session; uploaded chunks become garbage for GC."""
        if self.state in ("open", "closing"):
            self.state = "failed"
            self._release_all()
            self._manager.close()


def open_write(
    manager_address: str,
    dataset: DatasetName | str,
    policy: WritePolicy | None = None,
    client_id: str | None = None,
) -> WriteSession:
    return WriteSession(manager_address, dataset, policy, client_id)
