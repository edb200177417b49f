"""Benefactor daemon: chunk service, heartbeats, GC rounds, replica pushes.

Client puts take priority over replication work: the replicator waits at a
gate until no put is in flight before each copy, mirroring the placement
rule that creation of new files beats replication.
"""

from __future__ import annotations

import socket
import threading
import time

from .. import wire
from ..config import Config
from ..errors import NotFoundError, ReRegisterError, StorageError, UnavailableError
from .store import ChunkStore


class PutPriorityGate:
    """Counts in-flight client puts; replication waits for zero."""

    def __init__(self):
        self._active = 0
        self._cond = threading.Condition()

    def put_begin(self):
        with self._cond:
            self._active += 1

    def put_end(self):
        with self._cond:
            self._active -= 1
            self._cond.notify_all()

    def wait_replication_turn(self, timeout: float = 5.0) -> bool:
        """True when no put is active; False if still busy after timeout."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while self._active > 0:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cond.wait(remaining)
            return True

    @property
    def active_puts(self) -> int:
        with self._cond:
            return self._active


class BenefactorDaemon:
    def __init__(
        self,
        root,
        capacity: int,
        manager_address: str | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        config: Config | None = None,
    ):
        cfg = config or Config()
        self.store = ChunkStore(root, capacity)
        self.manager_address = manager_address
        self.heartbeat_interval = cfg.get_duration("heartbeat_interval")
        self.gc_interval = cfg.get_duration("gc_interval")
        self.gate = PutPriorityGate()
        self.draining = False
        self.benefactor_id: str | None = None
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

    def free_space(self) -> int:
        return max(0, self.store.capacity_limit - self.store.used_bytes)

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        targets = [self._accept_loop]
        if self.manager_address:
            targets += [self._heartbeat_loop, self._gc_loop]
        for target in targets:
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

    def serve_forever(self):
        self.start()
        while not self._stop.is_set():
            time.sleep(0.2)

    # -- manager-facing loops ------------------------------------------------------

    def _manager_conn(self) -> wire.Connection:
        return wire.Connection(self.manager_address, timeout=10.0)

    def register(self):
        with self._manager_conn() as conn:
            payload = (
                wire.Packer()
                .string(self.address)
                .u64(self.free_space())
                .u64(self.store.disk_free())
                .bytes()
            )
            self.benefactor_id = conn.request(wire.OP_REGISTER, payload).string()
        return self.benefactor_id

    def _heartbeat_loop(self):
        while not self._stop.is_set():
            try:
                if self.benefactor_id is None:
                    self.register()
                else:
                    with self._manager_conn() as conn:
                        payload = (
                            wire.Packer()
                            .string(self.benefactor_id)
                            .u64(self.free_space())
                            .u64(self.store.disk_free())
                            .bytes()
                        )
                        conn.request(wire.OP_HEARTBEAT, payload)
            except ReRegisterError:
                self.benefactor_id = None
                continue
            except (OSError, StorageError):
                pass
            self._stop.wait(self.heartbeat_interval)

    def _gc_loop(self):
        while not self._stop.wait(self.gc_interval):
            try:
                self.run_gc_round()
            except (OSError, StorageError):
                pass  # manager unreachable: retried next period

    def run_gc_round(self) -> int:
        """Send the inventory, delete what the manager says is garbage."""
        if self.benefactor_id is None:
            self.register()
        inventory = self.store.inventory()
        payload = wire.Packer().string(self.benefactor_id).count(len(inventory))
        for cid in inventory:
            payload.chunk_id(cid)
        with self._manager_conn() as conn:
            reply = conn.request(wire.OP_GC_EXCHANGE, payload.bytes())
        doomed = [reply.chunk_id() for _ in range(reply.count())]
        return self.store.delete(doomed)

    # -- request handling -------------------------------------------------------------

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
            threading.Thread(target=self._serve_client, args=(sock,), daemon=True).start()

    def _serve_client(self, sock):
        try:
            wire.serve_connection(sock, self._dispatch)
        finally:
            sock.close()

    def _dispatch(self, opcode: int, r: wire.Reader) -> bytes:
        handler = _HANDLERS.get(opcode)
        if handler is None:
            raise wire.ProtocolError(f"unknown opcode {opcode:#x}")
        return handler(self, r)

    def _h_ping(self, r):
        return b""

    def _h_put(self, r):
        if self.draining:
            raise UnavailableError("benefactor is draining")
        cid = r.chunk_id()
        payload = r.blob()
        self.gate.put_begin()
        try:
            self.store.put(cid, payload)
        finally:
            self.gate.put_end()
        return b""

    def _h_get(self, r):
        return wire.Packer().blob(self.store.get(r.chunk_id())).bytes()

    def _h_delete(self, r):
        ids = [r.chunk_id() for _ in range(r.count())]
        return wire.Packer().u32(self.store.delete(ids)).bytes()

    def _h_inventory(self, r):
        inventory = self.store.inventory()
        pk = wire.Packer().count(len(inventory))
        for cid in inventory:
            pk.chunk_id(cid)
        return pk.bytes()

    def _h_replicate(self, r):
        manager_address = r.string()
        items = [
            (r.chunk_id(), r.string(), r.u64(), r.string(), r.string())
            for _ in range(r.count())
        ]
        results = []
        for cid, app, version, target_bid, target_addr in items:
            self.gate.wait_replication_turn()
            try:
                payload = self.store.get(cid)
            except (NotFoundError, StorageError):
                results.append((cid, 0, "source-missing"))
                continue
            try:
                with wire.Connection(target_addr, timeout=15.0) as conn:
                    conn.request(
                        wire.OP_PUT_CHUNK, wire.Packer().chunk_id(cid).blob(payload).bytes()
                    )
            except (OSError, StorageError) as exc:
                results.append((cid, 0, f"target: {exc}"))
                continue
            try:
                with wire.Connection(manager_address, timeout=10.0) as conn:
                    body = (
                        wire.Packer()
                        .string(app)
                        .u64(version)
                        .chunk_id(cid)
                        .string(target_bid)
                        .bytes()
                    )
                    conn.request(wire.OP_COMMIT_REPLICA, body)
            except (OSError, StorageError) as exc:
                results.append((cid, 0, f"manager: {exc}"))
                continue
            results.append((cid, 1, ""))
        pk = wire.Packer().count(len(results))
        for cid, ok, detail in results:
            pk.chunk_id(cid).u8(ok).string(detail)
        return pk.bytes()

    def _h_stats(self, r):
        return (
            wire.Packer()
            .u64(self.store.used_bytes)
            .u64(self.store.capacity_limit)
            .u64(self.store.disk_free())
            .u8(int(self.draining))
            .u32(self.store.chunk_count)
            .bytes()
        )

    def _h_drain(self, r):
        self.draining = bool(r.u8())
        return b""

    def _h_run_gc(self, r):
        return wire.Packer().u32(self.run_gc_round()).bytes()


_HANDLERS = {
    wire.OP_B_PING: BenefactorDaemon._h_ping,
    wire.OP_PUT_CHUNK: BenefactorDaemon._h_put,
    wire.OP_GET_CHUNK: BenefactorDaemon._h_get,
    wire.OP_DELETE_CHUNKS: BenefactorDaemon._h_delete,
    wire.OP_INVENTORY: BenefactorDaemon._h_inventory,
    wire.OP_REPLICATE: BenefactorDaemon._h_replicate,
    wire.OP_STATS: BenefactorDaemon._h_stats,
    wire.OP_DRAIN: BenefactorDaemon._h_drain,
    wire.OP_RUN_GC: BenefactorDaemon._h_run_gc,
}
