"""Boundary-candidate scan, pure backend (numpy).

Same fingerprint and bit-identical results as the compiled kernel in
_scan.pyx (see there for the definition and the low-bit rationale). uint64
arithmetic wraps modulo 2**64 in numpy exactly as it does in C, which is what
makes the two backends interchangeable.
"""

from __future__ import annotations

import numpy as np

MAX_WINDOW = 512

MULT_A = 0x9E3779B97F4A7C15
MULT_B = 0xC2B2AE3D27D4EB4F

_SLIDE_BLOCK = 1 << 22
_WINDOW_BLOCK = 1 << 16


def _coefficients(mult: int, m: int) -> np.ndarray:
    coef = np.empty(m, dtype=np.uint64)
    c = 1
    for j in range(m):
        coef[m - 1 - j] = c
        c = (c * mult) % 2**64
    return coef


def _combine(ha: np.ndarray, hb: np.ndarray) -> np.ndarray:
    return ha ^ ((hb << np.uint64(32)) | (hb >> np.uint64(32)))


def scan_candidates(data, m: int, k: int, p: int, first: int = 0) -> list[int]:
    if m > MAX_WINDOW:
        raise ValueError("window size exceeds kernel limit")
    b = np.frombuffer(data, dtype=np.uint8)
    n = len(b)
    if n == 0 or first + m > n:
        return []
    if p == 1:
        return _scan_sliding(b, m, k, first)
    return _scan_windows(b, m, k, p, first)


def _scan_windows(b: np.ndarray, m: int, k: int, p: int, first: int) -> list[int]:
    mask = np.uint64((1 << k) - 1)
    coef_a = _coefficients(MULT_A, m)
    coef_b = _coefficients(MULT_B, m)
    starts = np.arange(first, len(b) - m + 1, p, dtype=np.int64)
    out: list[int] = []
    for off in range(0, len(starts), _WINDOW_BLOCK):
        st = starts[off : off + _WINDOW_BLOCK]
        windows = np.lib.stride_tricks.as_strided(
            b[st[0] :], shape=(len(st), m), strides=(p, 1)
        ).astype(np.uint64)
        ha = (windows * coef_a).sum(axis=1, dtype=np.uint64)
        hb = (windows * coef_b).sum(axis=1, dtype=np.uint64)
        out.extend(st[(_combine(ha, hb) & mask) == 0].tolist())
    return out


def _one_sliding_lane(
    seg: np.ndarray, mult: int, m: int, count: int, s_len: int
) -> np.ndarray:
    # H(i) = mult**(m-1+i) * (S(i+m) - S(i)) with S(t) = sum_{u<t} b[u]*inv**u,
    # block-local exponents (the fingerprint is position free).
    inv = np.uint64(pow(mult, -1, 2**64))
    inv_pows = np.empty(s_len + 1, dtype=np.uint64)
    inv_pows[0] = 1
    np.cumprod(np.full(s_len, inv, dtype=np.uint64), out=inv_pows[1:])
    prefix = np.zeros(s_len + 1, dtype=np.uint64)
    np.cumsum(seg * inv_pows[:s_len], out=prefix[1:], dtype=np.uint64)
    pows = np.empty(count, dtype=np.uint64)
    pows[0] = pow(mult, m - 1, 2**64)
    if count > 1:
        np.cumprod(np.full(count - 1, np.uint64(mult), dtype=np.uint64), out=pows[1:])
        pows[1:] *= pows[0]
    return pows * (prefix[m : m + count] - prefix[0:count])


def _scan_sliding(b: np.ndarray, m: int, k: int, first: int) -> list[int]:
    n = len(b)
    mask = np.uint64((1 << k) - 1)
    out: list[int] = []
    last = n - m
    s = first
    while s <= last:
        e = min(s + _SLIDE_BLOCK, last + 1)
        seg = b[s : min(e + m - 1, n)].astype(np.uint64)
        count = e - s
        ha = _one_sliding_lane(seg, MULT_A, m, count, len(seg))
        hb = _one_sliding_lane(seg, MULT_B, m, count, len(seg))
        out.extend((np.nonzero((_combine(ha, hb) & mask) == 0)[0] + s).tolist())
        s = e
    return out
