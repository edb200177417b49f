from .core import (
    BACKEND,
    DEFAULT_CHUNK_SIZE,
    DIGEST_BYTES,
    MULT_A,
    MULT_B,
    CbchParams,
    ChunkDescriptor,
    ContentChunker,
    RollingHash,
    SimilarityReport,
    SourceReadError,
    chunk_content,
    chunk_fixed,
    content_address,
    rolling_window_hash,
    scan_candidates,
    set_backend,
    similarity,
)

__all__ = [
    "BACKEND",
    "DEFAULT_CHUNK_SIZE",
    "DIGEST_BYTES",
    "MULT_A",
    "MULT_B",
    "CbchParams",
    "ChunkDescriptor",
    "ContentChunker",
    "RollingHash",
    "SimilarityReport",
    "SourceReadError",
    "chunk_content",
    "chunk_fixed",
    "content_address",
    "rolling_window_hash",
    "scan_candidates",
    "set_backend",
    "similarity",
]
