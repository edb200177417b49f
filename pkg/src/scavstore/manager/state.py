"""Manager metadata state: benefactor registry, reservations, chunk table,
committed chunk-maps, replication planning, garbage collection, lifecycle.

Pure state machine: no sockets, no clocks, no locks. Callers pass `now` and
serialize access (the server wraps every call in one lock, which is what
makes the metadata linearizable). Mutations that must survive restart are
reported to an optional journal sink; soft state (registry, reservations,
in-flight chunks) is rebuilt by re-registration and is never journaled.
"""

from __future__ import annotations

import hashlib
import math
import uuid
from dataclasses import dataclass, field

from ..errors import (
    NotFoundError,
    PurgedError,
    RejectedError,
    ReRegisterError,
    UnavailableError,
)
from ..names import DatasetName

PENDING = "pending"
SATISFIED = "satisfied"

MODE_NONE = "none"
MODE_REPLACE = "replace"
MODE_PURGE = "purge"


@dataclass
class BenefactorRecord:
    benefactor_id: str
    address: str
    free_space: int
    disk_free: int
    last_heartbeat: float

    def online(self, now: float, liveness_timeout: float) -> bool:
        return now - self.last_heartbeat <= liveness_timeout


@dataclass
class Reservation:
    reservation_id: str
    client_id: str
    expiry: float
    per_benefactor: dict[str, int]
    chunks: set[bytes] = field(default_factory=set)


@dataclass
class ChunkEntry:
    length: int
    replicas: list[str] = field(default_factory=list)
    committed_refs: int = 0
    inflight: set[str] = field(default_factory=set)
    pending_targets: set[str] = field(default_factory=set)

    def shielded(self) -> bool:
        return bool(self.committed_refs or self.inflight or self.pending_targets)


@dataclass
class VersionRecord:
    name: DatasetName
    version: int
    chunks: list[tuple[bytes, int]]  # (chunk id, length), in file order
    total_bytes: int
    committed_at: float
    replication_target: int


@dataclass
class AppFolder:
    policy_mode: str = MODE_NONE
    purge_after: float = 3600.0
    next_version: int = 1
    versions: dict[int, VersionRecord] = field(default_factory=dict)
    purged: dict[int, str] = field(default_factory=dict)  # version -> rendered name


def benefactor_id_for(address: str) -> str:
    return hashlib.sha256(address.encode()).hexdigest()[:16]


class ManagerState:
    def __init__(
        self,
        liveness_timeout: float = 15.0,
        reservation_ttl: float = 600.0,
        default_replication: int = 1,
        default_mode: str = MODE_NONE,
        default_purge_after: float = 3600.0,
        journal=None,
    ):
        self.liveness_timeout = liveness_timeout
        self.reservation_ttl = reservation_ttl
        self.default_replication = default_replication
        self.default_mode = default_mode
        self.default_purge_after = default_purge_after
        self.journal = journal
        self.benefactors: dict[str, BenefactorRecord] = {}
        self.reservations: dict[str, Reservation] = {}
        self.chunks: dict[bytes, ChunkEntry] = {}
        self.folders: dict[str, AppFolder] = {}
        self.reserve_queue_depth = 0  # maintained by the server, read by planner

    # -- registry -----------------------------------------------------------

    def register(self, address: str, free_space: int, disk_free: int, now: float) -> str:
        bid = benefactor_id_for(address)
        self.benefactors[bid] = BenefactorRecord(bid, address, free_space, disk_free, now)
        return bid

    def heartbeat(self, bid: str, free_space: int, disk_free: int, now: float):
        rec = self.benefactors.get(bid)
        if rec is None:
            raise ReRegisterError(f"unknown benefactor {bid}")
        rec.free_space = free_space
        rec.disk_free = disk_free
        rec.last_heartbeat = now

    def online_benefactors(self, now: float) -> list[BenefactorRecord]:
        return [
            b
            for b in self.benefactors.values()
            if b.online(now, self.liveness_timeout)
        ]

    def address_of(self, bid: str) -> str:
        rec = self.benefactors.get(bid)
        return rec.address if rec else ""

    # -- reservations --------------------------------------------------------

    def _prune_reservations(self, now: float):
        for rid in [r for r, res in self.reservations.items() if res.expiry <= now]:
            self._drop_reservation(rid)

    def _drop_reservation(self, rid: str):
        res = self.reservations.pop(rid, None)
        if res is None:
            return
        for cid in res.chunks:
            entry = self.chunks.get(cid)
            if entry is not None:
                entry.inflight.discard(rid)
                self._maybe_forget(cid)

    def _maybe_forget(self, cid: bytes):
        entry = self.chunks.get(cid)
        if entry is not None and not entry.shielded():
            del self.chunks[cid]

    def _reserved_on(self, bid: str) -> int:
        return sum(res.per_benefactor.get(bid, 0) for res in self.reservations.values())

    def _ranked_online(self, now: float, exclude: set[str]) -> list[BenefactorRecord]:
        ranked = [
            b for b in self.online_benefactors(now) if b.benefactor_id not in exclude
        ]
        ranked.sort(key=lambda b: (-(b.free_space - self._reserved_on(b.benefactor_id)), b.benefactor_id))
        return ranked

    def reserve(
        self,
        client_id: str,
        bytes_hint: int,
        stripe_width: int,
        now: float,
        exclude: tuple[str, ...] = (),
    ) -> tuple[str, list[tuple[str, str, int]]]:
        """Pick up to stripe_width distinct benefactors, most free space first."""
        if stripe_width < 1:
            raise RejectedError("stripe width must be >= 1")
        self._prune_reservations(now)
        ranked = self._ranked_online(now, set(exclude))
        if not ranked:
            raise UnavailableError("no online benefactor to allocate on")
        members = ranked[:stripe_width]
        share = math.ceil(bytes_hint / len(members)) if bytes_hint else 0
        rid = uuid.uuid4().hex
        self.reservations[rid] = Reservation(
            reservation_id=rid,
            client_id=client_id,
            expiry=now + self.reservation_ttl,
            per_benefactor={b.benefactor_id: share for b in members},
        )
        return rid, [(b.benefactor_id, b.address, share) for b in members]

    def extend_reservation(self, rid: str, more_bytes: int, now: float):
        self._prune_reservations(now)
        res = self.reservations.get(rid)
        if res is None:
            raise RejectedError("unknown or expired reservation")
        share = math.ceil(more_bytes / max(1, len(res.per_benefactor)))
        for bid in res.per_benefactor:
            res.per_benefactor[bid] += share
        res.expiry = now + self.reservation_ttl

    def release_reservation(self, rid: str):
        self._drop_reservation(rid)

    def record_upload(
        self, rid: str, stored: list[tuple[bytes, int, str]], now: float
    ):
        """Client reports chunks stored under an open session; shields them
        from GC and makes them visible to lookup_chunks before commit."""
        self._prune_reservations(now)
        res = self.reservations.get(rid)
        if res is None:
            raise RejectedError("unknown or expired reservation")
        for cid, length, bid in stored:
            entry = self.chunks.get(cid)
            if entry is None:
                entry = self.chunks[cid] = ChunkEntry(length=length)
            elif entry.length != length:
                raise RejectedError(f"length mismatch for chunk {cid.hex()}")
            if bid not in entry.replicas:
                entry.replicas.append(bid)
            entry.inflight.add(rid)
            res.chunks.add(cid)
        res.expiry = now + self.reservation_ttl

    # -- chunk lookup ---------------------------------------------------------

    def lookup_chunks(self, ids: list[bytes]) -> dict[bytes, list[tuple[str, str]]]:
        found = {}
        for cid in ids:
            entry = self.chunks.get(cid)
            if entry is not None and entry.replicas:
                found[cid] = [(bid, self.address_of(bid)) for bid in entry.replicas]
        return found

    # -- commit and versions ---------------------------------------------------

    def _folder(self, application: str) -> AppFolder:
        folder = self.folders.get(application)
        if folder is None:
            folder = self.folders[application] = AppFolder(
                policy_mode=self.default_mode, purge_after=self.default_purge_after
            )
        return folder

    def commit_map(
        self,
        name: DatasetName,
        chunk_refs: list[tuple[bytes, int]],
        reservation_id: str | None,
        now: float,
        replication_target: int | None = None,
    ) -> int:
        self._prune_reservations(now)
        folder = self._folder(name.application)
        target = replication_target or self.default_replication
        ids = [cid for cid, _ in chunk_refs]
        for rec in folder.versions.values():
            if rec.name == name and [c for c, _ in rec.chunks] == ids:
                return rec.version  # duplicate commit of identical content
        for cid, length in chunk_refs:
            entry = self.chunks.get(cid)
            if entry is None or not entry.replicas:
                raise RejectedError(f"chunk {cid.hex()} was never stored")
            if entry.length != length:
                raise RejectedError(f"length mismatch for chunk {cid.hex()}")
        version = folder.next_version
        record = VersionRecord(
            name=name,
            version=version,
            chunks=list(chunk_refs),
            total_bytes=sum(length for _, length in chunk_refs),
            committed_at=now,
            replication_target=target,
        )
        if self.journal is not None:
            self.journal.commit(record, {cid: self.chunks[cid].replicas for cid in ids})
        folder.next_version += 1
        folder.versions[version] = record
        for cid, _ in chunk_refs:
            self.chunks[cid].committed_refs += 1
        if reservation_id:
            self._drop_reservation(reservation_id)
        self.apply_lifecycle(now, only_application=name.application)
        return version

    def replication_state(self, record: VersionRecord) -> str:
        for cid, _ in record.chunks:
            entry = self.chunks.get(cid)
            if entry is None or len(entry.replicas) < record.replication_target:
                return PENDING
        return SATISFIED

    def _live_versions(self, application: str | None = None):
        folders = (
            [self.folders[application]]
            if application is not None and application in self.folders
            else ([] if application is not None else self.folders.values())
        )
        for folder in folders:
            yield from folder.versions.values()

    def resolve_version(
        self,
        application: str,
        node: str | None = None,
        timestep: int | None = None,
        version: int | None = None,
    ) -> VersionRecord:
        folder = self.folders.get(application)
        if folder is None:
            raise NotFoundError(f"no application {application!r}")
        if version is not None:
            rec = folder.versions.get(version)
            if rec is not None:
                return rec
            if version in folder.purged:
                raise PurgedError(f"{folder.purged[version]} v{version} was purged")
            raise NotFoundError(f"{application} has no version {version}")
        matches = [
            rec
            for rec in folder.versions.values()
            if (node is None or rec.name.node == node)
            and (timestep is None or rec.name.timestep == timestep)
        ]
        if matches:
            return max(matches, key=lambda r: r.version)
        if node is not None and timestep is not None:
            rendered = DatasetName(application, node, timestep).render()
            if rendered in folder.purged.values():
                raise PurgedError(f"{rendered} was purged")
        wanted = ".".join(
            str(part) for part in (application, node, timestep) if part is not None
        )
        raise NotFoundError(f"no committed version matches {wanted}")

    def chunk_locations(self, record: VersionRecord) -> list[tuple[bytes, int, list[tuple[str, str]]]]:
        out = []
        for cid, length in record.chunks:
            entry = self.chunks.get(cid)
            replicas = entry.replicas if entry else []
            out.append((cid, length, [(b, self.address_of(b)) for b in replicas]))
        return out

    # -- replication -----------------------------------------------------------

    def plan_replication(
        self, application: str, version: int, now: float
    ) -> list[tuple[bytes, str, str]]:
        """Shadow map for one version: (chunk, source, target) per missing
        replica. Empty while reservation requests are queued: new writes win."""
        if self.reserve_queue_depth > 0:
            return []
        record = self.resolve_version(application, version=version)
        self._prune_reservations(now)
        assignments: list[tuple[bytes, str, str]] = []
        planned: dict[str, int] = {}

        def rank(bid):
            b = self.benefactors[bid]
            return (-(b.free_space - self._reserved_on(bid) - planned.get(bid, 0)), bid)

        online = {b.benefactor_id for b in self.online_benefactors(now)}
        seen: set[bytes] = set()
        for cid, _ in record.chunks:
            if cid in seen:
                continue
            seen.add(cid)
            entry = self.chunks.get(cid)
            if entry is None:
                continue
            have = len(entry.replicas) + len(entry.pending_targets)
            missing = record.replication_target - have
            if missing <= 0:
                continue
            holders = set(entry.replicas) | entry.pending_targets
            candidates = sorted(online - holders, key=rank)
            sources = [b for b in entry.replicas if b in online] or entry.replicas
            if not sources:
                continue
            source = sources[0]
            for target in candidates[:missing]:
                entry.pending_targets.add(target)
                planned[target] = planned.get(target, 0) + entry.length
                assignments.append((cid, source, target))
        return assignments

    def abandon_assignment(self, cid: bytes, target: str):
        entry = self.chunks.get(cid)
        if entry is not None:
            entry.pending_targets.discard(target)
            self._maybe_forget(cid)

    def commit_replica(self, application: str, version: int, cid: bytes, new_bid: str, now: float):
        record = self.resolve_version(application, version=version)
        if cid not in {c for c, _ in record.chunks}:
            raise RejectedError("chunk does not belong to that version")
        entry = self.chunks.get(cid)
        if entry is None:
            raise RejectedError("chunk no longer tracked")
        entry.pending_targets.discard(new_bid)
        if new_bid not in entry.replicas:
            entry.replicas.append(new_bid)
            if self.journal is not None:
                self.journal.replica_added(cid, new_bid)

    # -- garbage collection ------------------------------------------------------

    def gc_exchange(self, bid: str, inventory: list[bytes], now: float) -> list[bytes]:
        self._prune_reservations(now)
        held = set(inventory)
        deletable = [cid for cid in inventory if cid not in self.chunks]
        # Detect local loss: chunks we believed were on this benefactor.
        for cid, entry in list(self.chunks.items()):
            if bid in entry.replicas and cid not in held:
                entry.replicas.remove(bid)
                if self.journal is not None:
                    self.journal.replica_dropped(cid, bid)
                self._maybe_forget(cid)
        return deletable

    # -- lifecycle and deletion ----------------------------------------------------

    def set_policy(
        self, application: str, mode: str, purge_after: float, now: float
    ) -> list[tuple[str, int]]:
        if mode not in (MODE_NONE, MODE_REPLACE, MODE_PURGE):
            raise RejectedError(f"unknown lifecycle mode {mode!r}")
        folder = self._folder(application)
        folder.policy_mode = mode
        folder.purge_after = purge_after
        if self.journal is not None:
            self.journal.policy(application, mode, purge_after)
        return self.apply_lifecycle(now, only_application=application)

    def _purge(self, application: str, record: VersionRecord):
        folder = self.folders[application]
        del folder.versions[record.version]
        folder.purged[record.version] = record.name.render()
        for cid, _ in record.chunks:
            entry = self.chunks.get(cid)
            if entry is not None:
                entry.committed_refs -= 1
                self._maybe_forget(cid)
        if self.journal is not None:
            self.journal.purged(application, record.version)

    def apply_lifecycle(
        self, now: float, only_application: str | None = None
    ) -> list[tuple[str, int]]:
        purged: list[tuple[str, int]] = []
        apps = [only_application] if only_application else list(self.folders)
        for app in apps:
            folder = self.folders.get(app)
            if folder is None or folder.policy_mode == MODE_NONE:
                continue
            victims: list[VersionRecord] = []
            if folder.policy_mode == MODE_REPLACE:
                by_node: dict[str, list[VersionRecord]] = {}
                for rec in folder.versions.values():
                    by_node.setdefault(rec.name.node, []).append(rec)
                for recs in by_node.values():
                    keep = max(recs, key=lambda r: (r.name.timestep, r.version))
                    victims.extend(r for r in recs if r is not keep)
            else:  # MODE_PURGE
                victims = [
                    rec
                    for rec in folder.versions.values()
                    if rec.committed_at + folder.purge_after < now
                ]
            for rec in victims:
                self._purge(app, rec)
                purged.append((rec.name.render(), rec.version))
        return purged

    def delete(self, text: str) -> int:
        """Delete one dataset name (application.node.timestep) or, when the
        text has no dots, a whole application folder. Returns versions removed."""
        removed = 0
        if "." in text:
            name = DatasetName.parse(text)
            folder = self.folders.get(name.application)
            victims = (
                [r for r in folder.versions.values() if r.name == name] if folder else []
            )
            if not victims:
                raise NotFoundError(f"no dataset {text}")
            for rec in victims:
                del folder.versions[rec.version]
                for cid, _ in rec.chunks:
                    entry = self.chunks.get(cid)
                    if entry is not None:
                        entry.committed_refs -= 1
                        self._maybe_forget(cid)
                removed += 1
            if self.journal is not None:
                self.journal.deleted_name(text)
        else:
            folder = self.folders.pop(text, None)
            if folder is None:
                raise NotFoundError(f"no application {text}")
            for rec in folder.versions.values():
                for cid, _ in rec.chunks:
                    entry = self.chunks.get(cid)
                    if entry is not None:
                        entry.committed_refs -= 1
                        self._maybe_forget(cid)
                removed += 1
            if self.journal is not None:
                self.journal.deleted_application(text)
        return removed

    # -- listing --------------------------------------------------------------

    def list_namespace(self, prefix: str = "") -> list[dict]:
        out = []
        for app in sorted(self.folders):
            folder = self.folders[app]
            versions = [
                {
                    "name": rec.name.render(),
                    "version": rec.version,
                    "total_bytes": rec.total_bytes,
                    "committed_at": rec.committed_at,
                    "chunks": len(rec.chunks),
                    "replication_state": self.replication_state(rec),
                }
                for rec in sorted(folder.versions.values(), key=lambda r: r.version)
                if not prefix or rec.name.render().startswith(prefix)
            ]
            if prefix and not versions and not app.startswith(prefix):
                continue
            out.append(
                {
                    "application": app,
                    "policy": folder.policy_mode,
                    "purge_after": folder.purge_after,
                    "versions": versions,
                }
            )
        return out
