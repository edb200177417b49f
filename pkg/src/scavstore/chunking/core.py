"""Chunking algorithms: fixed-size and content-defined splitting with
content addressing.

Chunk ids are SHA-256 digests of the chunk payload, so equal bytes get equal
names everywhere and a store can verify what it holds. Content-defined
boundaries come from a polynomial rolling fingerprint over each m-byte
window (two multipliers, combined; exact definition in _scan.pyx, including
why one multiplier alone has too-weak low bits for the boundary test). A
window starting at i is a boundary candidate when the k low bits of the
fingerprint are zero; the cut falls after the window, at i + m. Candidate
windows start at stream offsets 0, p, 2p, ... regardless of where earlier
cuts landed, which keeps boundaries stable under insertions of whole
multiples of p (and of any size when p == 1).

Two scan backends exist: a compiled kernel (_scan, Cython) and a numpy one
(_scan_py). They return identical candidates; the compiled one is picked at
import when available unless SCAVSTORE_PURE=1.
"""

from __future__ import annotations

import hashlib
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import _scan_py

try:
    from . import _scan as _compiled
except ImportError:
    _compiled = None

_kernel = _scan_py
BACKEND = "pure"
if _compiled is not None and os.environ.get("SCAVSTORE_PURE") != "1":
    _kernel = _compiled
    BACKEND = "compiled"


def set_backend(name: str) -> str:
    """Switch the candidate-scan backend ("compiled" or "pure") at runtime.
    Used by the backend benchmark and tests; returns the previous name."""
    global _kernel, BACKEND, scan_candidates
    previous = BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ValueError("compiled kernel not built")
        _kernel = _compiled
    elif name == "pure":
        _kernel = _scan_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    scan_candidates = _kernel.scan_candidates
    return previous

MULT_A = _scan_py.MULT_A
MULT_B = _scan_py.MULT_B
MAX_WINDOW = _scan_py.MAX_WINDOW
DIGEST_BYTES = 32
DEFAULT_CHUNK_SIZE = 1 << 20

_U64 = (1 << 64) - 1
_READ_BLOCK = 8 << 20

scan_candidates = _kernel.scan_candidates


def content_address(payload) -> bytes:
    """32-byte SHA-256 digest naming the payload."""
    return hashlib.sha256(payload).digest()


_pool: ThreadPoolExecutor | None = None


def _digest_many(views: list) -> list[bytes]:
    # hashlib releases the GIL on large inputs, so a small shared pool gets
    # real parallelism out of the digest phase.
    global _pool
    if len(views) < 2:
        return [content_address(v) for v in views]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=min(8, 2 * (os.cpu_count() or 1)))
    return list(_pool.map(content_address, views))


class SourceReadError(OSError):
    """Reading the input stream failed after consuming bytes_consumed bytes."""

    def __init__(self, bytes_consumed: int, cause: BaseException):
        self.bytes_consumed = bytes_consumed
        super().__init__(f"stream read failed after {bytes_consumed} bytes: {cause}")


@dataclass(frozen=True)
class ChunkDescriptor:
    id: bytes
    offset: int
    length: int

    @property
    def hex(self) -> str:
        return self.id.hex()


@dataclass(frozen=True)
class CbchParams:
    m: int = 20
    k: int = 14
    p: int = 20
    min_chunk: int = 64 << 10
    max_chunk: int = 4 << 20

    def __post_init__(self):
        if self.m < 1 or self.m > MAX_WINDOW:
            raise ValueError(f"window size must be in [1, {MAX_WINDOW}]")
        if not 1 <= self.p <= self.m:
            raise ValueError("window advance must be in [1, m]")
        if not 1 <= self.k <= 30:
            raise ValueError("boundary bit count must be in [1, 30]")
        if not 0 < self.min_chunk < self.max_chunk:
            raise ValueError("need 0 < min_chunk < max_chunk")


@dataclass
class SimilarityReport:
    shared_bytes: int
    total_bytes: int
    ratio: float
    heuristic_throughput: float = 0.0


def _combine(ha: int, hb: int) -> int:
    return ha ^ (((hb << 32) | (hb >> 32)) & _U64)


def rolling_window_hash(window) -> int:
    """Fingerprint of one full window; equals the scan backends on the same bytes."""
    ha = hb = 0
    for b in bytes(window):
        ha = (ha * MULT_A + b) & _U64
        hb = (hb * MULT_B + b) & _U64
    return _combine(ha, hb)


class RollingHash:
    """Incrementally maintained window fingerprint for p == 1 sliding.

    slide(old, new) after seeding on data[i:i+m] yields exactly
    rolling_window_hash(data[i+1:i+1+m]).
    """

    __slots__ = ("m", "_ha", "_hb", "_drop_a", "_drop_b")

    def __init__(self, window):
        window = bytes(window)
        self.m = len(window)
        ha = hb = 0
        for b in window:
            ha = (ha * MULT_A + b) & _U64
            hb = (hb * MULT_B + b) & _U64
        self._ha = ha
        self._hb = hb
        self._drop_a = pow(MULT_A, self.m - 1, 1 << 64)
        self._drop_b = pow(MULT_B, self.m - 1, 1 << 64)

    @property
    def value(self) -> int:
        return _combine(self._ha, self._hb)

    def slide(self, old: int, new: int) -> int:
        self._ha = ((self._ha - old * self._drop_a) * MULT_A + new) & _U64
        self._hb = ((self._hb - old * self._drop_b) * MULT_B + new) & _U64
        return self.value


def _as_view(data) -> memoryview:
    return memoryview(data).cast("B")


# ---------------------------------------------------------------------------
# Fixed-size chunking (FsCH)


def chunk_fixed(source, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[ChunkDescriptor]:
    """Split into equal chunks (last may be short); ids via content_address."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if hasattr(source, "read"):
        return _chunk_fixed_stream(source, chunk_size)
    view = _as_view(source)
    views = [view[off : off + chunk_size] for off in range(0, len(view), chunk_size)]
    ids = _digest_many(views)
    return [
        ChunkDescriptor(ids[i], i * chunk_size, len(views[i])) for i in range(len(views))
    ]


def _chunk_fixed_stream(stream, chunk_size: int) -> list[ChunkDescriptor]:
    out: list[ChunkDescriptor] = []
    offset = 0
    pending = bytearray()
    while True:
        try:
            block = stream.read(_READ_BLOCK)
        except OSError as exc:
            raise SourceReadError(offset + len(pending), exc) from exc
        if not block:
            break
        pending += block
        full = len(pending) // chunk_size * chunk_size
        if full:
            view = _as_view(pending)
            views = [view[off : off + chunk_size] for off in range(0, full, chunk_size)]
            ids = _digest_many(views)
            for v in views:
                v.release()
            view.release()
            for i, payload_id in enumerate(ids):
                out.append(ChunkDescriptor(payload_id, offset + i * chunk_size, chunk_size))
            offset += full
            del pending[:full]
    if pending:
        out.append(ChunkDescriptor(content_address(pending), offset, len(pending)))
    return out


# ---------------------------------------------------------------------------
# Content-defined chunking (CbCH)


def _walk_cuts(candidates, n: int, params: CbchParams) -> list[int]:
    """Greedy min/max walk over candidate cut offsets; returns chunk ends."""
    ends: list[int] = []
    s = 0
    idx = 0
    while s < n:
        cut = -1
        while idx < len(candidates):
            c = candidates[idx]
            if c - s < params.min_chunk:
                idx += 1
                continue
            if c - s > params.max_chunk or c > n:
                break
            cut = c
            idx += 1
            break
        if cut < 0:
            cut = min(s + params.max_chunk, n)
        ends.append(cut)
        s = cut
    return ends


def chunk_content(source, params: CbchParams | None = None) -> list[ChunkDescriptor]:
    """Content-defined split; boundary where the window hash has k zero low bits."""
    params = params or CbchParams()
    if hasattr(source, "read"):
        return _chunk_content_stream(source, params)
    view = _as_view(source)
    n = len(view)
    if n == 0:
        return []
    starts = scan_candidates(view, params.m, params.k, params.p, 0)
    ends = _walk_cuts([w + params.m for w in starts], n, params)
    views = []
    s = 0
    for e in ends:
        views.append(view[s:e])
        s = e
    ids = _digest_many(views)
    out = []
    s = 0
    for i, e in enumerate(ends):
        out.append(ChunkDescriptor(ids[i], s, e - s))
        s = e
    return out


def _chunk_content_stream(stream, params: CbchParams) -> list[ChunkDescriptor]:
    chunker = ContentChunker(params)
    out: list[ChunkDescriptor] = []

    def digest(pieces):
        ids = _digest_many([payload for _, payload in pieces])
        for (offset, payload), payload_id in zip(pieces, ids):
            out.append(ChunkDescriptor(payload_id, offset, len(payload)))

    consumed = 0
    while True:
        try:
            block = stream.read(_READ_BLOCK)
        except OSError as exc:
            raise SourceReadError(consumed, exc) from exc
        if not block:
            break
        consumed += len(block)
        digest(chunker.feed(block))
    digest(chunker.finish())
    return out


def similarity(
    reference: list[ChunkDescriptor],
    candidate: list[ChunkDescriptor],
    heuristic_throughput: float = 0.0,
) -> SimilarityReport:
    """Fraction of candidate bytes whose chunk id already exists in reference."""
    known = {d.id for d in reference}
    shared = sum(d.length for d in candidate if d.id in known)
    total = sum(d.length for d in candidate)
    return SimilarityReport(
        shared_bytes=shared,
        total_bytes=total,
        ratio=shared / total if total else 0.0,
        heuristic_throughput=heuristic_throughput,
    )


class ContentChunker:
    """Streaming CbCH: feed() bytes in any split, collect (offset, payload) cuts.

    Produces exactly the chunks chunk_content() produces on the concatenated
    input. Buffers at most max_chunk + one feed block plus the m-1 bytes of
    window history that may span an emitted cut.
    """

    def __init__(self, params: CbchParams | None = None):
        self.params = params or CbchParams()
        self._buf = bytearray()
        self._lo = 0  # absolute offset of _buf[0]
        self._head = 0  # absolute offset past the last buffered byte
        self._chunk_start = 0
        self._next_window = 0  # next grid window start to evaluate
        self._cuts: deque[int] = deque()
        self._finished = False

    def feed(self, block) -> list[tuple[int, bytes]]:
        if self._finished:
            raise ValueError("chunker already finished")
        self._buf += block
        self._head += len(block)
        self._scan()
        return self._emit(final=False)

    def finish(self) -> list[tuple[int, bytes]]:
        self._finished = True
        return self._emit(final=True)

    def _scan(self):
        p = self.params
        while self._next_window + p.m <= self._head:
            first_local = self._next_window - self._lo
            starts = scan_candidates(
                _as_view(self._buf), p.m, p.k, p.p, first_local
            )
            self._cuts.extend(self._lo + w + p.m for w in starts)
            last_local = first_local + (len(self._buf) - p.m - first_local) // p.p * p.p
            self._next_window = self._lo + last_local + p.p

    def _emit(self, final: bool) -> list[tuple[int, bytes]]:
        p = self.params
        known_to = self._head if final else self._next_window + p.m - 1
        out = []
        while self._chunk_start < self._head:
            s = self._chunk_start
            cut = -1
            while self._cuts and self._cuts[0] - s < p.min_chunk:
                self._cuts.popleft()
            if self._cuts and self._cuts[0] - s <= p.max_chunk and self._cuts[0] <= self._head:
                cut = self._cuts.popleft()
            elif final and s + p.max_chunk >= self._head:
                cut = self._head
            elif s + p.max_chunk <= known_to:
                cut = s + p.max_chunk
            else:
                break
            out.append((s, bytes(self._buf[s - self._lo : cut - self._lo])))
            self._chunk_start = cut
            drop = max(0, cut - (p.m - 1) - self._lo)
            if drop:
                del self._buf[:drop]
                self._lo += drop
        return out
