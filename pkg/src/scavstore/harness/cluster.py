"""Local cluster orchestration: one manager plus N benefactor daemons as
separate processes on loopback, with fault injection (kill, restart,
chunk corruption)."""

from __future__ import annotations

import os
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

from ..client.rpc import ManagerClient
from ..errors import StorageError


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ClusterError(RuntimeError):
    pass


class _Proc:
    def __init__(self, args: list[str], log_path: Path):
        self.args = args
        self.log_path = log_path
        self.proc: subprocess.Popen | None = None

    def spawn(self):
        log = open(self.log_path, "ab")
        self.proc = subprocess.Popen(
            self.args, stdout=log, stderr=subprocess.STDOUT, start_new_session=True
        )
        log.close()

    def kill(self):
        if self.proc is not None and self.proc.poll() is None:
            os.kill(self.proc.pid, signal.SIGKILL)
            self.proc.wait()

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None


class LocalCluster:
    """1 manager + n benefactors as child processes under base_dir."""

    def __init__(
        self,
        base_dir: str | Path,
        n_benefactors: int = 4,
        capacity: int = 8 << 30,
        manager_overrides: dict[str, str] | None = None,
        benefactor_overrides: dict[str, str] | None = None,
    ):
        self.base = Path(base_dir)
        self.base.mkdir(parents=True, exist_ok=True)
        self.n = n_benefactors
        self.capacity = capacity
        self.manager_port = free_port()
        self.manager_address = f"127.0.0.1:{self.manager_port}"
        overrides = {"heartbeat_interval": "0.5s", "liveness_timeout": "2s",
                     "replication_interval": "0.25s", "lifecycle_interval": "1s"}
        overrides.update(manager_overrides or {})
        self._mgr_overrides = overrides
        b_overrides = {"heartbeat_interval": "0.5s", "gc_interval": "3600s"}
        b_overrides.update(benefactor_overrides or {})
        self._ben_overrides = b_overrides
        self.manager = _Proc(self._manager_args(), self.base / "manager.log")
        self.benefactors: list[_Proc] = []
        self.benefactor_ports: list[int] = []
        for i in range(n_benefactors):
            port = free_port()
            self.benefactor_ports.append(port)
            self.benefactors.append(
                _Proc(self._benefactor_args(i, port), self.base / f"benefactor{i}.log")
            )

    def _cli(self, *args: str) -> list[str]:
        return [sys.executable, "-m", "scavstore.cli", *args]

    def _manager_args(self) -> list[str]:
        args = self._cli(
            "manager",
            "--listen",
            self.manager_address,
            "--journal",
            str(self.base / "journal.bin"),
        )
        for key, value in self._mgr_overrides.items():
            args += ["-o", f"{key}={value}"]
        return args

    def _benefactor_args(self, index: int, port: int) -> list[str]:
        args = self._cli(
            "benefactor",
            "--manager",
            self.manager_address,
            "--root",
            str(self.base / f"b{index}"),
            "--capacity",
            str(self.capacity),
            "--listen",
            f"127.0.0.1:{port}",
        )
        for key, value in self._ben_overrides.items():
            args += ["-o", f"{key}={value}"]
        return args

    # -- lifecycle ----------------------------------------------------------

    def start(self, timeout: float = 30.0):
        self.manager.spawn()
        for b in self.benefactors:
            b.spawn()
        self.wait_ready(timeout=timeout)
        return self

    def wait_ready(self, n_online: int | None = None, timeout: float = 30.0):
        want = self.n if n_online is None else n_online
        deadline = time.monotonic() + timeout
        last_err = None
        while time.monotonic() < deadline:
            if not self.manager.alive():
                raise ClusterError(f"manager died; see {self.base / 'manager.log'}")
            try:
                with ManagerClient(self.manager_address, timeout=2.0) as mc:
                    online = [b for b in mc.list_benefactors() if b.online]
                if len(online) >= want:
                    return
            except (OSError, StorageError) as exc:
                last_err = exc
            time.sleep(0.05)
        raise ClusterError(f"cluster not ready after {timeout}s: {last_err}")

    def stop(self):
        for b in self.benefactors:
            b.kill()
        self.manager.kill()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- fault injection -------------------------------------------------------

    def kill_benefactor(self, index: int):
        self.benefactors[index].kill()

    def restart_benefactor(self, index: int):
        self.benefactors[index].kill()
        self.benefactors[index].spawn()

    def restart_manager(self):
        self.manager.kill()
        self.manager.spawn()

    def benefactor_index_of(self, address: str) -> int:
        port = int(address.rsplit(":", 1)[1])
        return self.benefactor_ports.index(port)

    def corrupt_chunk(self, index: int, chunk_hex: str | None = None) -> str:
        """Flip one byte of a stored chunk file; returns the chunk hex."""
        root = self.base / f"b{index}"
        victim = None
        for fan1 in sorted(root.iterdir()):
            if fan1.name in ("tmp", "quarantine") or not fan1.is_dir():
                continue
            for fan2 in sorted(fan1.iterdir()):
                for path in sorted(fan2.iterdir()):
                    if chunk_hex is None or path.name == chunk_hex:
                        victim = path
                        break
                if victim:
                    break
            if victim:
                break
        if victim is None:
            raise ClusterError(f"no chunk to corrupt on benefactor {index}")
        blob = bytearray(victim.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        victim.write_bytes(blob)
        return victim.name

    def disk_bytes(self, index: int) -> int:
        """Chunk bytes on disk for one benefactor (excludes tmp/quarantine)."""
        root = self.base / f"b{index}"
        total = 0
        for fan1 in root.iterdir():
            if fan1.name in ("tmp", "quarantine") or not fan1.is_dir():
                continue
            for fan2 in fan1.iterdir():
                for path in fan2.iterdir():
                    total += path.stat().st_size
        return total
