# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Boundary-candidate scan over a byte buffer (compiled kernel).

Window fingerprint over data[i:i+m], all arithmetic mod 2**64:

    hA(i) = sum_j MULT_A**(m-1-j) * data[i+j]
    hB(i) = sum_j MULT_B**(m-1-j) * data[i+j]
    H(i)  = hA(i) ^ rotl64(hB(i), 32)

A single polynomial sum has weak low bits (bit t of the sum never depends on
input bits above t, so e.g. all-even bytes would force low bits to zero and
quadruple the boundary rate at k=2). The second multiplier rotated in mixes
high-order diffusion into the tested low bits. `scan_candidates` returns
window start offsets where the k low bits of H are zero, for starts first,
first+p, first+2p, ...  Must stay bit-identical to _scan_py.
"""

from libc.stdint cimport uint64_t, uint8_t

MAX_WINDOW = 512
DEF _MAX_WINDOW = 512

cdef uint64_t MULT_A = 0x9E3779B97F4A7C15
cdef uint64_t MULT_B = 0xC2B2AE3D27D4EB4F


cdef inline uint64_t combine(uint64_t ha, uint64_t hb) noexcept:
    return ha ^ ((hb << 32) | (hb >> 32))


def scan_candidates(const uint8_t[::1] data, int m, int k, int p, Py_ssize_t first):
    cdef Py_ssize_t n = data.shape[0]
    cdef uint64_t mask = (<uint64_t>1 << k) - 1
    cdef uint64_t coef_a[_MAX_WINDOW]
    cdef uint64_t coef_b[_MAX_WINDOW]
    cdef uint64_t rem_a[256]
    cdef uint64_t rem_b[256]
    cdef uint64_t ha, hb, ca, cb, byte
    cdef Py_ssize_t i, j, w
    cdef list out = []
    if m > _MAX_WINDOW:
        raise ValueError("window size exceeds kernel limit")
    if n == 0 or first + m > n:
        return out
    ca = 1
    cb = 1
    for j in range(m):
        coef_a[m - 1 - j] = ca
        coef_b[m - 1 - j] = cb
        ca = ca * MULT_A
        cb = cb * MULT_B
    if p == 1:
        # Incremental slide: the two state chains update in parallel, O(1)
        # per position.
        for j in range(256):
            rem_a[j] = <uint64_t>j * coef_a[0]
            rem_b[j] = <uint64_t>j * coef_b[0]
        ha = 0
        hb = 0
        for j in range(m):
            byte = <uint64_t>data[first + j]
            ha = ha * MULT_A + byte
            hb = hb * MULT_B + byte
        if (combine(ha, hb) & mask) == 0:
            out.append(first)
        for i in range(first + 1, n - m + 1):
            byte = <uint64_t>data[i + m - 1]
            ha = (ha - rem_a[data[i - 1]]) * MULT_A + byte
            hb = (hb - rem_b[data[i - 1]]) * MULT_B + byte
            if (combine(ha, hb) & mask) == 0:
                out.append(i)
    else:
        # Fresh evaluation per window; no state is carried between windows.
        w = first
        while w + m <= n:
            ha = 0
            hb = 0
            for j in range(m):
                byte = <uint64_t>data[w + j]
                ha = ha + coef_a[j] * byte
                hb = hb + coef_b[j] * byte
            if (combine(ha, hb) & mask) == 0:
                out.append(w)
            w += p
    return out
