"""Wire protocol shared by manager, benefactors and clients.

Framing (all integers big-endian):

    u32  frame length (bytes after this field)
    u8   opcode
    u64  request id (echoed in the reply)
    ...  payload

Payload primitives: u8/u16/u32/u64, f64, str = u16 length + UTF-8,
blob = u32 length + raw bytes, chunk id = raw 32 bytes, list = u32 count +
items. Replies use opcode REPLY_OK or REPLY_ERR; an error payload is two
strings (category, message). An unknown opcode gets a REPLY_ERR, never a
connection drop. The manager journal reuses the same record encoding.
"""

from __future__ import annotations

import socket
import struct
import threading

from .errors import ProtocolError, StorageError, error_for

# Manager service
OP_PING = 0x01
OP_REGISTER = 0x02
OP_HEARTBEAT = 0x03
OP_RESERVE = 0x04
OP_EXTEND_RESERVE = 0x05
OP_RELEASE_RESERVE = 0x06
OP_LOOKUP_CHUNKS = 0x07
OP_RECORD_UPLOAD = 0x08
OP_COMMIT_MAP = 0x09
OP_GET_MAP = 0x0A
OP_PLAN_REPLICATION = 0x0B
OP_COMMIT_REPLICA = 0x0C
OP_GC_EXCHANGE = 0x0D
OP_APPLY_LIFECYCLE = 0x0E
OP_DELETE = 0x0F
OP_LIST_NAMESPACE = 0x10
OP_SET_POLICY = 0x11
OP_LIST_BENEFACTORS = 0x12

# Benefactor service
OP_B_PING = 0x20
OP_PUT_CHUNK = 0x21
OP_GET_CHUNK = 0x22
OP_DELETE_CHUNKS = 0x23
OP_INVENTORY = 0x24
OP_REPLICATE = 0x25
OP_STATS = 0x26
OP_DRAIN = 0x27
OP_RUN_GC = 0x28

REPLY_OK = 0x70
REPLY_ERR = 0x71

CHUNK_ID_BYTES = 32
MAX_FRAME = 256 << 20

_HEADER = struct.Struct(">IBQ")


class Packer:
    __slots__ = ("_parts",)

    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int):
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int):
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int):
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int):
        self._parts.append(struct.pack(">Q", v))
        return self

    def i64(self, v: int):
        self._parts.append(struct.pack(">q", v))
        return self

    def f64(self, v: float):
        self._parts.append(struct.pack(">d", v))
        return self

    def string(self, s: str):
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ProtocolError("string too long")
        self._parts.append(struct.pack(">H", len(raw)))
        self._parts.append(raw)
        return self

    def blob(self, b):
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(bytes(b))
        return self

    def chunk_id(self, cid: bytes):
        if len(cid) != CHUNK_ID_BYTES:
            raise ProtocolError("chunk id must be 32 bytes")
        self._parts.append(cid)
        return self

    def count(self, n: int):
        return self.u32(n)

    def bytes(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes):
        self._buf = buf
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._buf):
            raise ProtocolError("truncated payload")
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def string(self) -> str:
        return self._take(self.u16()).decode("utf-8")

    def blob(self) -> bytes:
        return self._take(self.u32())

    def chunk_id(self) -> bytes:
        return self._take(CHUNK_ID_BYTES)

    def count(self) -> int:
        return self.u32()

    def done(self) -> bool:
        return self._pos == len(self._buf)


def write_frame(sock: socket.socket, opcode: int, request_id: int, payload: bytes = b""):
    sock.sendall(_HEADER.pack(len(payload) + 9, opcode, request_id) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    parts = []
    got = 0
    while got < n:
        block = sock.recv(min(n - got, 1 << 20))
        if not block:
            raise ConnectionError("peer closed")
        parts.append(block)
        got += len(block)
    return b"".join(parts) if len(parts) != 1 else parts[0]


def read_frame(sock: socket.socket) -> tuple[int, int, bytes]:
    """Returns (opcode, request_id, payload); raises ConnectionError on EOF."""
    head = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", head)
    if length < 9 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    rest = _recv_exact(sock, length)
    opcode = rest[0]
    (request_id,) = struct.unpack(">Q", rest[1:9])
    return opcode, request_id, rest[9:]


class Connection:
    """Client side of the protocol: one request in flight per connection."""

    def __init__(self, address: tuple[str, int] | str, timeout: float | None = 30.0):
        if isinstance(address, str):
            host, port = address.rsplit(":", 1)
            address = (host, int(port))
        self.address = address
        self._sock = socket.create_connection(address, timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()
        self._next_id = 0

    def request(self, opcode: int, payload: bytes = b"") -> Reader:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            write_frame(self._sock, opcode, rid, payload)
            while True:
                op, got_rid, body = read_frame(self._sock)
                if got_rid != rid:
                    continue  # stale reply from an abandoned request
                if op == REPLY_OK:
                    return Reader(body)
                if op == REPLY_ERR:
                    r = Reader(body)
                    raise error_for(r.string(), r.string())
                raise ProtocolError(f"unexpected reply opcode {op:#x}")

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_connection(sock: socket.socket, dispatch):
    """Request loop for one accepted socket.

    dispatch(opcode, Reader) returns reply payload bytes; a StorageError
    becomes a REPLY_ERR with its category, anything else a generic error.
    Loop ends when the peer disconnects.
    """
    while True:
        try:
            opcode, rid, payload = read_frame(sock)
        except (ConnectionError, OSError):
            return
        try:
            out = dispatch(opcode, Reader(payload))
            write_frame(sock, REPLY_OK, rid, out if out is not None else b"")
        except StorageError as exc:
            body = Packer().string(exc.category).string(str(exc)).bytes()
            try:
                write_frame(sock, REPLY_ERR, rid, body)
            except OSError:
                return
        except (ConnectionError, OSError):
            return
        except Exception as exc:  # noqa: BLE001 - daemon must answer, not die
            body = Packer().string("error").string(f"{type(exc).__name__}: {exc}").bytes()
            try:
                write_frame(sock, REPLY_ERR, rid, body)
            except OSError:
                return
