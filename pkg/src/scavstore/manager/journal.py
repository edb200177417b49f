"""Append-only metadata journal.

Records use the wire encoding, length-prefixed: u32 record length, u8 record
type, payload. Namespace-visible mutations (commits, purges, deletes, policy
changes) are fsynced before the state change applies; replica add/drop
records are only flushed, since losing one merely re-triggers replication.
Replay rebuilds folders, versions and the chunk table; registry and
reservations are soft state and come back through re-registration.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

from ..wire import Packer, Reader
from .state import AppFolder, ChunkEntry, DatasetName, ManagerState, VersionRecord

REC_COMMIT = 1
REC_REPLICA_ADD = 2
REC_REPLICA_DROP = 3
REC_PURGE = 4
REC_DELETE_NAME = 5
REC_DELETE_APP = 6
REC_POLICY = 7


class Journal:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")

    def _append(self, rec_type: int, payload: bytes, durable: bool):
        record = bytes([rec_type]) + payload
        self._fh.write(struct.pack(">I", len(record)) + record)
        self._fh.flush()
        if durable:
            os.fsync(self._fh.fileno())

    def commit(self, record: VersionRecord, replicas: dict[bytes, list[str]]):
        pk = (
            Packer()
            .string(record.name.render())
            .u64(record.version)
            .u32(record.replication_target)
            .f64(record.committed_at)
            .count(len(record.chunks))
        )
        for cid, length in record.chunks:
            pk.chunk_id(cid).u64(length)
            holders = replicas.get(cid, [])
            pk.count(len(holders))
            for bid in holders:
                pk.string(bid)
        self._append(REC_COMMIT, pk.bytes(), durable=True)

    def replica_added(self, cid: bytes, bid: str):
        self._append(REC_REPLICA_ADD, Packer().chunk_id(cid).string(bid).bytes(), durable=False)

    def replica_dropped(self, cid: bytes, bid: str):
        self._append(REC_REPLICA_DROP, Packer().chunk_id(cid).string(bid).bytes(), durable=False)

    def purged(self, application: str, version: int):
        self._append(REC_PURGE, Packer().string(application).u64(version).bytes(), durable=True)

    def deleted_name(self, rendered: str):
        self._append(REC_DELETE_NAME, Packer().string(rendered).bytes(), durable=True)

    def deleted_application(self, application: str):
        self._append(REC_DELETE_APP, Packer().string(application).bytes(), durable=True)

    def policy(self, application: str, mode: str, purge_after: float):
        self._append(
            REC_POLICY,
            Packer().string(application).string(mode).f64(purge_after).bytes(),
            durable=True,
        )

    def close(self):
        self._fh.close()


def _iter_records(path: Path):
    """Yields (type, payload); stops at a torn tail and reports its offset."""
    good = 0
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos + 4 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        if pos + 4 + length > len(data) or length < 1:
            break
        record = data[pos + 4 : pos + 4 + length]
        pos += 4 + length
        good = pos
        yield record[0], record[1:], good


def replay(path: str | Path, state: ManagerState) -> int:
    """Applies journal records to a fresh state; truncates a torn tail.
    Returns the number of records applied."""
    path = Path(path)
    if not path.exists():
        return 0
    applied = 0
    good = 0
    for rec_type, payload, offset in _iter_records(path):
        _apply(state, rec_type, Reader(payload))
        applied += 1
        good = offset
    if good < path.stat().st_size:
        with open(path, "r+b") as fh:
            fh.truncate(good)
    return applied


def _folder(state: ManagerState, application: str) -> AppFolder:
    folder = state.folders.get(application)
    if folder is None:
        folder = state.folders[application] = AppFolder(
            policy_mode=state.default_mode, purge_after=state.default_purge_after
        )
    return folder


def _unref(state: ManagerState, record: VersionRecord):
    for cid, _ in record.chunks:
        entry = state.chunks.get(cid)
        if entry is not None:
            entry.committed_refs -= 1
            if not entry.shielded():
                del state.chunks[cid]


def _apply(state: ManagerState, rec_type: int, r: Reader):
    if rec_type == REC_COMMIT:
        name = DatasetName.parse(r.string())
        version = r.u64()
        target = r.u32()
        committed_at = r.f64()
        chunks = []
        for _ in range(r.count()):
            cid = r.chunk_id()
            length = r.u64()
            holders = [r.string() for _ in range(r.count())]
            chunks.append((cid, length))
            entry = state.chunks.get(cid)
            if entry is None:
                entry = state.chunks[cid] = ChunkEntry(length=length)
            for bid in holders:
                if bid not in entry.replicas:
                    entry.replicas.append(bid)
            entry.committed_refs += 1
        folder = _folder(state, name.application)
        folder.versions[version] = VersionRecord(
            name=name,
            version=version,
            chunks=chunks,
            total_bytes=sum(length for _, length in chunks),
            committed_at=committed_at,
            replication_target=target,
        )
        folder.next_version = max(folder.next_version, version + 1)
    elif rec_type == REC_REPLICA_ADD:
        cid = r.chunk_id()
        bid = r.string()
        entry = state.chunks.get(cid)
        if entry is not None and bid not in entry.replicas:
            entry.replicas.append(bid)
    elif rec_type == REC_REPLICA_DROP:
        cid = r.chunk_id()
        bid = r.string()
        entry = state.chunks.get(cid)
        if entry is not None and bid in entry.replicas:
            entry.replicas.remove(bid)
    elif rec_type == REC_PURGE:
        application = r.string()
        version = r.u64()
        folder = state.folders.get(application)
        if folder is not None and version in folder.versions:
            record = folder.versions.pop(version)
            folder.purged[version] = record.name.render()
            _unref(state, record)
    elif rec_type == REC_DELETE_NAME:
        name = DatasetName.parse(r.string())
        folder = state.folders.get(name.application)
        if folder is not None:
            for record in [v for v in folder.versions.values() if v.name == name]:
                del folder.versions[record.version]
                _unref(state, record)
    elif rec_type == REC_DELETE_APP:
        folder = state.folders.pop(r.string(), None)
        if folder is not None:
            for record in folder.versions.values():
                _unref(state, record)
    elif rec_type == REC_POLICY:
        folder = _folder(state, r.string())
        folder.policy_mode = r.string()
        folder.purge_after = r.f64()
