"""Content-addressed chunk store on local disk.

Layout: <root>/<aa>/<bb>/<64 hex digest> with the first two byte pairs as
fan-out directories, plus <root>/tmp for in-progress writes and
<root>/quarantine for payloads that failed verification. A chunk becomes
visible only through os.replace of a fully written temp file, so readers see
either nothing or the whole chunk; a killed process leaves only temp files,
which the startup scan clears.
"""

from __future__ import annotations

import os
import shutil
import threading
import uuid
from pathlib import Path

from ..chunking import content_address
from ..errors import IntegrityError, NotFoundError, SpaceError


class ChunkStore:
    def __init__(self, root: str | Path, capacity_limit: int):
        self.root = Path(root)
        self.capacity_limit = capacity_limit
        self._tmp = self.root / "tmp"
        self._quarantine = self.root / "quarantine"
        self._lock = threading.Lock()
        self._sizes: dict[bytes, int] = {}
        self.used_bytes = 0
        self._scan()

    def _scan(self):
        self.root.mkdir(parents=True, exist_ok=True)
        self._quarantine.mkdir(exist_ok=True)
        if self._tmp.exists():
            shutil.rmtree(self._tmp)
        self._tmp.mkdir()
        for fan1 in self.root.iterdir():
            if fan1.name in ("tmp", "quarantine") or not fan1.is_dir():
                continue
            for fan2 in fan1.iterdir():
                for path in fan2.iterdir():
                    try:
                        cid = bytes.fromhex(path.name)
                    except ValueError:
                        continue
                    if len(cid) == 32:
                        size = path.stat().st_size
                        self._sizes[cid] = size
                        self.used_bytes += size

    def _path(self, cid: bytes) -> Path:
        h = cid.hex()
        return self.root / h[:2] / h[2:4] / h

    def put(self, cid: bytes, payload: bytes):
        """Store payload under cid; verifies the digest before anything lands."""
        if content_address(payload) != cid:
            raise IntegrityError(f"payload does not hash to {cid.hex()}")
        with self._lock:
            if cid in self._sizes:
                return  # idempotent
            if self.used_bytes + len(payload) > self.capacity_limit:
                raise SpaceError(
                    f"capacity {self.capacity_limit} exceeded by {len(payload)} byte chunk"
                )
            self.used_bytes += len(payload)
            self._sizes[cid] = len(payload)
        try:
            tmp = self._tmp / uuid.uuid4().hex
            with open(tmp, "wb") as fh:
                fh.write(payload)
            final = self._path(cid)
            final.parent.mkdir(parents=True, exist_ok=True)
            os.replace(tmp, final)
        except BaseException:
            with self._lock:
                if self._sizes.pop(cid, None) is not None:
                    self.used_bytes -= len(payload)
            raise

    def get(self, cid: bytes) -> bytes:
        with self._lock:
            known = cid in self._sizes
        if not known:
            raise NotFoundError(f"chunk {cid.hex()} not stored here")
        try:
            payload = self._path(cid).read_bytes()
        except FileNotFoundError:
            raise NotFoundError(f"chunk {cid.hex()} not stored here") from None
        if content_address(payload) != cid:
            self.quarantine(cid)
            raise IntegrityError(f"stored chunk {cid.hex()} failed verification")
        return payload

    def quarantine(self, cid: bytes):
        """Move a bad chunk aside so it leaves the inventory and gets re-replicated."""
        with self._lock:
            size = self._sizes.pop(cid, None)
            if size is not None:
                self.used_bytes -= size
        try:
            os.replace(self._path(cid), self._quarantine / cid.hex())
        except FileNotFoundError:
            pass

    def delete(self, ids: list[bytes]) -> int:
        deleted = 0
        for cid in ids:
            with self._lock:
                size = self._sizes.pop(cid, None)
                if size is None:
                    continue
                self.used_bytes -= size
            try:
                self._path(cid).unlink()
            except FileNotFoundError:
                pass
            deleted += 1
        return deleted

    def inventory(self) -> list[bytes]:
        with self._lock:
            return list(self._sizes)

    def __contains__(self, cid: bytes) -> bool:
        with self._lock:
            return cid in self._sizes

    def verify_all(self) -> list[bytes]:
        """Re-hash every stored chunk; quarantines and returns the bad ones."""
        bad = []
        for cid in self.inventory():
            try:
                self.get(cid)
            except IntegrityError:
                bad.append(cid)
            except NotFoundError:
                pass
        return bad

    @property
    def chunk_count(self) -> int:
        with self._lock:
            return len(self._sizes)

    def disk_free(self) -> int:
        return shutil.disk_usage(self.root).free
