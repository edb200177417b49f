"""Manager daemon: serves the metadata protocol over TCP.

All state mutations run under one lock, so metadata is linearizable; the
socket layer is one thread per connection. Two background loops run next to
request service: the replication planner (which stands down while any
reservation request is queued, so new writes always win) and the lifecycle
sweeper.
"""

from __future__ import annotations

import socket
import threading
import time

from .. import wire
from ..config import Config
from ..errors import NotFoundError, StorageError
from .journal import Journal, replay
from .state import DatasetName, ManagerState

GET_EXACT = 0
GET_BY_VERSION = 1
GET_LATEST = 2
GET_LATEST_ON_NODE = 3


class ManagerServer:
    def __init__(
        self,
        config: Config | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        journal_path=None,
        clock=time.time,
    ):
        cfg = config or Config()
        self.clock = clock
        self.state = ManagerState(
            liveness_timeout=cfg.get_duration("liveness_timeout"),
            reservation_ttl=cfg.get_duration("reservation_ttl"),
            default_replication=cfg.get_int("replication"),
            default_mode=cfg.get("lifecycle_mode"),
            default_purge_after=cfg.get_duration("purge_after"),
        )
        self.replication_interval = cfg.get_duration("replication_interval")
        self.lifecycle_interval = cfg.get_duration("lifecycle_interval")
        self._journal_path = journal_path
        if journal_path is not None:
            replay(journal_path, self.state)
            self.state.journal = Journal(journal_path)
        self._lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(64)
        self.host, self.port = self._listener.getsockname()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self):
        for target in (self._accept_loop, self._planner_loop, self._lifecycle_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)
        if self.state.journal is not None:
            self.state.journal.close()

    def serve_forever(self):
        self.start()
        while not self._stop.is_set():
            time.sleep(0.2)

    # -- socket plumbing ------------------------------------------------------

    def _accept_loop(self):
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(
                target=self._serve_client, args=(sock,), daemon=True
            ).start()

    def _serve_client(self, sock: socket.socket):
        try:
            wire.serve_connection(sock, self._dispatch)
        finally:
            sock.close()

    def _dispatch(self, opcode: int, r: wire.Reader) -> bytes:
        handler = _HANDLERS.get(opcode)
        if handler is None:
            raise wire.ProtocolError(f"unknown opcode {opcode:#x}")
        if opcode == wire.OP_RESERVE:
            # Queued reservations defer replication planning: creation of new
            # files has priority over replication.
            with self._lock:
                self.state.reserve_queue_depth += 1
            try:
                with self._lock:
                    return handler(self, r)
            finally:
                with self._lock:
                    self.state.reserve_queue_depth -= 1
        with self._lock:
            return handler(self, r)

    # -- background loops -------------------------------------------------------

    def _planner_loop(self):
        while not self._stop.wait(self.replication_interval):
            try:
                self.run_replication_round()
            except Exception:  # noqa: BLE001 - keep the loop alive
                pass

    def run_replication_round(self) -> int:
        """Plan under the lock, copy over the network without it."""
        now = self.clock()
        by_source: dict[str, list] = {}
        with self._lock:
            if self.state.reserve_queue_depth > 0:
                return 0
            for app, folder in list(self.state.folders.items()):
                for rec in list(folder.versions.values()):
                    if rec.replication_target <= 1:
                        continue
                    if self.state.replication_state(rec) == "satisfied":
                        continue
                    for cid, src, tgt in self.state.plan_replication(app, rec.version, now):
                        by_source.setdefault(src, []).append((cid, app, rec.version, tgt))
        sent = 0
        for src, items in by_source.items():
            with self._lock:
                addr = self.state.address_of(src)
                targets = {tgt: self.state.address_of(tgt) for _, _, _, tgt in items}
            payload = wire.Packer().string(self.address).count(len(items))
            for cid, app, version, tgt in items:
                payload.chunk_id(cid).string(app).u64(version).string(tgt).string(
                    targets[tgt]
                )
            try:
                with wire.Connection(addr, timeout=30.0) as conn:
                    reply = conn.request(wire.OP_REPLICATE, payload.bytes())
                failed = set()
                for _ in range(reply.count()):
                    cid = reply.chunk_id()
                    ok = reply.u8()
                    reply.string()  # detail
                    if not ok:
                        failed.add(cid)
                    else:
                        sent += 1
                with self._lock:
                    for cid, app, version, tgt in items:
                        if cid in failed:
                            self.state.abandon_assignment(cid, tgt)
            except (OSError, StorageError):
                with self._lock:
                    for cid, _, _, tgt in items:
                        self.state.abandon_assignment(cid, tgt)
        return sent

    def _lifecycle_loop(self):
        while not self._stop.wait(self.lifecycle_interval):
            with self._lock:
                self.state.apply_lifecycle(self.clock())

    # -- handlers ----------------------------------------------------------------

    def _h_ping(self, r):
        return b""

    def _h_register(self, r):
        bid = self.state.register(r.string(), r.u64(), r.u64(), self.clock())
        return wire.Packer().string(bid).bytes()

    def _h_heartbeat(self, r):
        self.state.heartbeat(r.string(), r.u64(), r.u64(), self.clock())
        return b""

    def _h_reserve(self, r):
        client = r.string()
        hint = r.u64()
        width = r.u32()
        exclude = tuple(r.string() for _ in range(r.count()))
        rid, members = self.state.reserve(client, hint, width, self.clock(), exclude)
        pk = wire.Packer().string(rid).count(len(members))
        for bid, addr, share in members:
            pk.string(bid).string(addr).u64(share)
        return pk.bytes()

    def _h_extend(self, r):
        self.state.extend_reservation(r.string(), r.u64(), self.clock())
        return b""

    def _h_release(self, r):
        self.state.release_reservation(r.string())
        return b""

    def _h_lookup(self, r):
        ids = [r.chunk_id() for _ in range(r.count())]
        found = self.state.lookup_chunks(ids)
        pk = wire.Packer().count(len(found))
        for cid, holders in found.items():
            pk.chunk_id(cid).count(len(holders))
            for bid, addr in holders:
                pk.string(bid).string(addr)
        return pk.bytes()

    def _h_record_upload(self, r):
        rid = r.string()
        stored = [(r.chunk_id(), r.u64(), r.string()) for _ in range(r.count())]
        self.state.record_upload(rid, stored, self.clock())
        return b""

    def _h_commit_map(self, r):
        name = DatasetName.parse(r.string())
        rid = r.string() or None
        target = r.u32() or None
        chunks = [(r.chunk_id(), r.u64()) for _ in range(r.count())]
        version = self.state.commit_map(name, chunks, rid, self.clock(), target)
        return wire.Packer().u64(version).bytes()

    def _pack_map(self, rec) -> bytes:
        pk = (
            wire.Packer()
            .string(rec.name.render())
            .u64(rec.version)
            .u64(rec.total_bytes)
            .f64(rec.committed_at)
            .u32(rec.replication_target)
            .string(self.state.replication_state(rec))
        )
        locations = self.state.chunk_locations(rec)
        pk.count(len(locations))
        for cid, length, holders in locations:
            pk.chunk_id(cid).u64(length).count(len(holders))
            for bid, addr in holders:
                pk.string(bid).string(addr)
        return pk.bytes()

    def _h_get_map(self, r):
        mode = r.u8()
        app = r.string()
        node = r.string()
        timestep = r.i64()
        version = r.u64()
        if mode == GET_EXACT:
            rec = self.state.resolve_version(app, node=node, timestep=timestep)
        elif mode == GET_BY_VERSION:
            rec = self.state.resolve_version(app, version=version)
        elif mode == GET_LATEST:
            rec = self.state.resolve_version(app)
        elif mode == GET_LATEST_ON_NODE:
            rec = self.state.resolve_version(app, node=node)
        else:
            raise wire.ProtocolError(f"bad get mode {mode}")
        return self._pack_map(rec)

    def _h_plan(self, r):
        app = r.string()
        version = r.u64()
        plan = self.state.plan_replication(app, version, self.clock())
        pk = wire.Packer().count(len(plan))
        for cid, src, tgt in plan:
            pk.chunk_id(cid).string(src).string(self.state.address_of(src))
            pk.string(tgt).string(self.state.address_of(tgt))
        return pk.bytes()

    def _h_commit_replica(self, r):
        self.state.commit_replica(r.string(), r.u64(), r.chunk_id(), r.string(), self.clock())
        return b""

    def _h_gc_exchange(self, r):
        bid = r.string()
        inventory = [r.chunk_id() for _ in range(r.count())]
        deletable = self.state.gc_exchange(bid, inventory, self.clock())
        pk = wire.Packer().count(len(deletable))
        for cid in deletable:
            pk.chunk_id(cid)
        return pk.bytes()

    def _h_lifecycle(self, r):
        purged = self.state.apply_lifecycle(self.clock())
        pk = wire.Packer().count(len(purged))
        for rendered, version in purged:
            pk.string(rendered).u64(version)
        return pk.bytes()

    def _h_delete(self, r):
        removed = self.state.delete(r.string())
        return wire.Packer().u32(removed).bytes()

    def _h_list_namespace(self, r):
        listing = self.state.list_namespace(r.string())
        pk = wire.Packer().count(len(listing))
        for folder in listing:
            pk.string(folder["application"]).string(folder["policy"]).f64(
                folder["purge_after"]
            )
            pk.count(len(folder["versions"]))
            for v in folder["versions"]:
                pk.string(v["name"]).u64(v["version"]).u64(v["total_bytes"])
                pk.f64(v["committed_at"]).u32(v["chunks"]).string(v["replication_state"])
        return pk.bytes()

    def _h_set_policy(self, r):
        self.state.set_policy(r.string(), r.string(), r.f64(), self.clock())
        return b""

    def _h_list_benefactors(self, r):
        now = self.clock()
        records = sorted(self.state.benefactors.values(), key=lambda b: b.benefactor_id)
        pk = wire.Packer().count(len(records))
        for b in records:
            pk.string(b.benefactor_id).string(b.address).u64(b.free_space)
            pk.u64(b.disk_free).u8(int(b.online(now, self.state.liveness_timeout)))
            pk.f64(b.last_heartbeat)
        return pk.bytes()


_HANDLERS = {
    wire.OP_PING: ManagerServer._h_ping,
    wire.OP_REGISTER: ManagerServer._h_register,
    wire.OP_HEARTBEAT: ManagerServer._h_heartbeat,
    wire.OP_RESERVE: ManagerServer._h_reserve,
    wire.OP_EXTEND_RESERVE: ManagerServer._h_extend,
    wire.OP_RELEASE_RESERVE: ManagerServer._h_release,
    wire.OP_LOOKUP_CHUNKS: ManagerServer._h_lookup,
    wire.OP_RECORD_UPLOAD: ManagerServer._h_record_upload,
    wire.OP_COMMIT_MAP: ManagerServer._h_commit_map,
    wire.OP_GET_MAP: ManagerServer._h_get_map,
    wire.OP_PLAN_REPLICATION: ManagerServer._h_plan,
    wire.OP_COMMIT_REPLICA: ManagerServer._h_commit_replica,
    wire.OP_GC_EXCHANGE: ManagerServer._h_gc_exchange,
    wire.OP_APPLY_LIFECYCLE: ManagerServer._h_lifecycle,
    wire.OP_DELETE: ManagerServer._h_delete,
    wire.OP_LIST_NAMESPACE: ManagerServer._h_list_namespace,
    wire.OP_SET_POLICY: ManagerServer._h_set_policy,
    wire.OP_LIST_BENEFACTORS: ManagerServer._h_list_benefactors,
}
