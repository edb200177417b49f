"""Typed RPC wrappers over the wire protocol for manager and benefactors."""

from __future__ import annotations

from dataclasses import dataclass

from .. import wire
from ..names import DatasetName

GET_EXACT = 0
GET_BY_VERSION = 1
GET_LATEST = 2
GET_LATEST_ON_NODE = 3


@dataclass
class ChunkMapView:
    name: str
    version: int
    total_bytes: int
    committed_at: float
    replication_target: int
    replication_state: str
    chunks: list[tuple[bytes, int, list[tuple[str, str]]]]  # (id, length, [(bid, addr)])


@dataclass
class BenefactorView:
    benefactor_id: str
    address: str
    free_space: int
    disk_free: int
    online: bool
    last_heartbeat: float


def _parse_map(r: wire.Reader) -> ChunkMapView:
    name = r.string()
    version = r.u64()
    total = r.u64()
    committed_at = r.f64()
    target = r.u32()
    state = r.string()
    chunks = []
    for _ in range(r.count()):
        cid = r.chunk_id()
        length = r.u64()
        holders = [(r.string(), r.string()) for _ in range(r.count())]
        chunks.append((cid, length, holders))
    return ChunkMapView(name, version, total, committed_at, target, state, chunks)


class ManagerClient:
    def __init__(self, address: str, timeout: float = 30.0):
        self.address = address
        self._conn = wire.Connection(address, timeout=timeout)

    def close(self):
        self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def ping(self):
        self._conn.request(wire.OP_PING)

    def reserve(
        self, client_id: str, bytes_hint: int, stripe_width: int, exclude=()
    ) -> tuple[str, list[tuple[str, str, int]]]:
        pk = wire.Packer().string(client_id).u64(bytes_hint).u32(stripe_width)
        pk.count(len(exclude))
        for bid in exclude:
            pk.string(bid)
        r = self._conn.request(wire.OP_RESERVE, pk.bytes())
        rid = r.string()
        members = [(r.string(), r.string(), r.u64()) for _ in range(r.count())]
        return rid, members

    def extend_reservation(self, rid: str, more_bytes: int):
        self._conn.request(
            wire.OP_EXTEND_RESERVE, wire.Packer().string(rid).u64(more_bytes).bytes()
        )

    def release_reservation(self, rid: str):
        self._conn.request(wire.OP_RELEASE_RESERVE, wire.Packer().string(rid).bytes())

    def lookup_chunks(self, ids: list[bytes]) -> dict[bytes, list[tuple[str, str]]]:
        pk = wire.Packer().count(len(ids))
        for cid in ids:
            pk.chunk_id(cid)
        r = self._conn.request(wire.OP_LOOKUP_CHUNKS, pk.bytes())
        found = {}
        for _ in range(r.count()):
            cid = r.chunk_id()
            found[cid] = [(r.string(), r.string()) for _ in range(r.count())]
        return found

    def record_upload(self, rid: str, stored: list[tuple[bytes, int, str]]):
        pk = wire.Packer().string(rid).count(len(stored))
        for cid, length, bid in stored:
            pk.chunk_id(cid).u64(length).string(bid)
        self._conn.request(wire.OP_RECORD_UPLOAD, pk.bytes())

    def commit_map(
        self,
        name: DatasetName | str,
        chunks: list[tuple[bytes, int]],
        reservation_id: str | None,
        replication: int = 0,
    ) -> int:
        rendered = name.render() if isinstance(name, DatasetName) else name
        pk = wire.Packer().string(rendered).string(reservation_id or "").u32(replication)
        pk.count(len(chunks))
        for cid, length in chunks:
            pk.chunk_id(cid).u64(length)
        return self._conn.request(wire.OP_COMMIT_MAP, pk.bytes()).u64()

    def _get(self, mode: int, app: str, node: str = "", timestep: int = -1, version: int = 0):
        pk = wire.Packer().u8(mode).string(app).string(node).i64(timestep).u64(version)
        return _parse_map(self._conn.request(wire.OP_GET_MAP, pk.bytes()))

    def get_map(self, name: DatasetName | str) -> ChunkMapView:
        if isinstance(name, str):
            name = DatasetName.parse(name)
        return self._get(GET_EXACT, name.application, name.node, name.timestep)

    def get_map_version(self, application: str, version: int) -> ChunkMapView:
        return self._get(GET_BY_VERSION, application, version=version)

    def get_latest(self, application: str, node: str | None = None) -> ChunkMapView:
        if node is None:
            return self._get(GET_LATEST, application)
        return self._get(GET_LATEST_ON_NODE, application, node=node)

    def plan_replication(self, application: str, version: int):
        pk = wire.Packer().string(application).u64(version)
        r = self._conn.request(wire.OP_PLAN_REPLICATION, pk.bytes())
        return [
            (r.chunk_id(), r.string(), r.string(), r.string(), r.string())
            for _ in range(r.count())
        ]

    def commit_replica(self, application: str, version: int, cid: bytes, bid: str):
        pk = wire.Packer().string(application).u64(version).chunk_id(cid).string(bid)
        self._conn.request(wire.OP_COMMIT_REPLICA, pk.bytes())

    def gc_exchange(self, bid: str, inventory: list[bytes]) -> list[bytes]:
        pk = wire.Packer().string(bid).count(len(inventory))
        for cid in inventory:
            pk.chunk_id(cid)
        r = self._conn.request(wire.OP_GC_EXCHANGE, pk.bytes())
        return [r.chunk_id() for _ in range(r.count())]

    def apply_lifecycle(self) -> list[tuple[str, int]]:
        r = self._conn.request(wire.OP_APPLY_LIFECYCLE)
        return [(r.string(), r.u64()) for _ in range(r.count())]

    def delete(self, text: str) -> int:
        return self._conn.request(wire.OP_DELETE, wire.Packer().string(text).bytes()).u32()

    def set_policy(self, application: str, mode: str, purge_after: float = 3600.0):
        pk = wire.Packer().string(application).string(mode).f64(purge_after)
        self._conn.request(wire.OP_SET_POLICY, pk.bytes())

    def list_namespace(self, prefix: str = "") -> list[dict]:
        r = self._conn.request(wire.OP_LIST_NAMESPACE, wire.Packer().string(prefix).bytes())
        out = []
        for _ in range(r.count()):
            folder = {
                "application": r.string(),
                "policy": r.string(),
                "purge_after": r.f64(),
                "versions": [],
            }
            for _ in range(r.count()):
                folder["versions"].append(
                    {
                        "name": r.string(),
                        "version": r.u64(),
                        "total_bytes": r.u64(),
                        "committed_at": r.f64(),
                        "chunks": r.u32(),
                        "replication_state": r.string(),
                    }
                )
            out.append(folder)
        return out

    def list_benefactors(self) -> list[BenefactorView]:
        r = self._conn.request(wire.OP_LIST_BENEFACTORS)
        return [
            BenefactorView(r.string(), r.string(), r.u64(), r.u64(), bool(r.u8()), r.f64())
            for _ in range(r.count())
        ]


class BenefactorClient:
    def __init__(self, address: str, timeout: float = 30.0):
        self.address = address
        self._conn = wire.Connection(address, timeout=timeout)

    def close(self):
        self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def ping(self):
        self._conn.request(wire.OP_B_PING)

    def put_chunk(self, cid: bytes, payload: bytes):
        self._conn.request(wire.OP_PUT_CHUNK, wire.Packer().chunk_id(cid).blob(payload).bytes())

    def get_chunk(self, cid: bytes) -> bytes:
        return self._conn.request(wire.OP_GET_CHUNK, wire.Packer().chunk_id(cid).bytes()).blob()

    def delete_chunks(self, ids: list[bytes]) -> int:
        pk = wire.Packer().count(len(ids))
        for cid in ids:
            pk.chunk_id(cid)
        return self._conn.request(wire.OP_DELETE_CHUNKS, pk.bytes()).u32()

    def inventory(self) -> list[bytes]:
        r = self._conn.request(wire.OP_INVENTORY)
        return [r.chunk_id() for _ in range(r.count())]

    def stats(self) -> dict:
        r = self._conn.request(wire.OP_STATS)
        return {
            "used_bytes": r.u64(),
            "capacity": r.u64(),
            "disk_free": r.u64(),
            "draining": bool(r.u8()),
            "chunks": r.u32(),
        }

    def drain(self, enabled: bool):
        self._conn.request(wire.OP_DRAIN, wire.Packer().u8(int(enabled)).bytes())

    def run_gc(self) -> int:
        return self._conn.request(wire.OP_RUN_GC).u32()
