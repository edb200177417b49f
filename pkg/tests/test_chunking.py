import io
import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scavstore import chunking as ck
from scavstore.chunking import _scan_py

# FIPS 180-2 test vectors for SHA-256.
SHA256_EMPTY = bytes.fromhex(
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
)
SHA256_ABC = bytes.fromhex(
    "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
)


def rand_bytes(n, seed=0):
    return np.random.default_rng(seed).integers(0, 256, n, dtype=np.uint8).tobytes()


class TestContentAddress:
    def test_empty_input_digest(self):
        assert ck.content_address(b"") == SHA256_EMPTY

    def test_abc_test_vector(self):
        assert ck.content_address(b"abc") == SHA256_ABC

    def test_distinct_payloads_distinct_ids(self):
        a = rand_bytes(1 << 20, seed=1)
        b = rand_bytes(1 << 20, seed=2)
        assert ck.content_address(a) != ck.content_address(b)

    def test_deterministic(self):
        payload = rand_bytes(100_000, seed=3)
        assert ck.content_address(payload) == ck.content_address(payload)
        assert ck.content_address(payload) == hashlib.sha256(payload).digest()


class TestChunkFixed:
    def test_exact_multiple(self):
        descs = ck.chunk_fixed(rand_bytes(3 << 20), 1 << 20)
        assert [(d.offset, d.length) for d in descs] == [
            (0, 1 << 20),
            (1 << 20, 1 << 20),
            (2 << 20, 1 << 20),
        ]

    def test_empty_stream(self):
        assert ck.chunk_fixed(b"", 1 << 20) == []

    def test_short_tail(self):
        descs = ck.chunk_fixed(rand_bytes(2_621_440), 1 << 20)  # 2.5 MB
        assert [d.length for d in descs] == [1 << 20, 1 << 20, 512 << 10]

    def test_ids_are_content_addresses(self):
        data = rand_bytes(2_500_000, seed=4)
        for d in ck.chunk_fixed(data, 1 << 20):
            assert d.id == ck.content_address(data[d.offset : d.offset + d.length])

    def test_stream_equals_buffer(self):
        data = rand_bytes(5_000_001, seed=5)
        assert ck.chunk_fixed(io.BytesIO(data), 123_457) == ck.chunk_fixed(data, 123_457)

    def test_bad_chunk_size(self):
        with pytest.raises(ValueError):
            ck.chunk_fixed(b"xy", 0)

    def test_read_error_carries_bytes_consumed(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def read(self, n):
                self.calls += 1
                if self.calls > 1:
                    raise OSError("gone")
                return b"z" * (9 << 20)

        with pytest.raises(ck.SourceReadError) as err:
            ck.chunk_fixed(Flaky(), 1 << 20)
        assert err.value.bytes_consumed == 9 << 20  # everything the source yielded


def contiguous(descs, n):
    off = 0
    for d in descs:
        if d.offset != off or d.length <= 0:
            return False
        off += d.length
    return off == n


class TestChunkContent:
    PARAMS = ck.CbchParams(m=20, k=14, p=20, min_chunk=64 << 10, max_chunk=4 << 20)

    def test_all_zero_stream_degenerates_to_min_chunks(self):
        # Zero bytes give a zero fingerprint, which passes the k-bit test at
        # every window, so every cut lands at min_chunk (cuts sit on the
        # window grid, hence exact when min_chunk is a multiple of p).
        assert ck.rolling_window_hash(b"\x00" * 20) == 0
        params = ck.CbchParams(m=20, k=10, p=20, min_chunk=4000, max_chunk=1 << 20)
        descs = ck.chunk_content(b"\x00" * 50_000, params)
        assert [d.length for d in descs[:-1]] == [4000] * (len(descs) - 1)
        assert descs[-1].length <= 4000
        params = ck.CbchParams(m=20, k=10, p=1, min_chunk=4097, max_chunk=1 << 20)
        descs = ck.chunk_content(b"\x00" * 50_000, params)
        assert [d.length for d in descs[:-1]] == [4097] * (len(descs) - 1)

    def test_mean_chunk_size_tracks_boundary_probability(self):
        # Monte-Carlo oracle: boundaries are ~Bernoulli(2**-k) per window at
        # stride p, so the mean chunk length sits near p * 2**k (= 320 KB)
        # plus the min_chunk offset; assert within a factor of two over
        # 50 random streams.
        total_bytes = 0
        total_chunks = 0
        for seed in range(50):
            data = rand_bytes(8 << 20, seed=seed)
            descs = ck.chunk_content(data, self.PARAMS)
            assert contiguous(descs, len(data))
            total_bytes += len(data)
            total_chunks += len(descs)
        mean = total_bytes / total_chunks
        expected = 20 * 2**14
        assert expected / 2 <= mean <= expected * 2

    def test_deterministic(self):
        data = rand_bytes(4 << 20, seed=6)
        assert ck.chunk_content(data, self.PARAMS) == ck.chunk_content(data, self.PARAMS)

    def test_respects_min_and_max(self):
        params = ck.CbchParams(m=16, k=6, p=16, min_chunk=2048, max_chunk=16384)
        data = rand_bytes(1 << 20, seed=7)
        descs = ck.chunk_content(data, params)
        assert contiguous(descs, len(data))
        assert all(d.length <= params.max_chunk for d in descs)
        assert all(d.length >= params.min_chunk for d in descs[:-1])

    def test_empty_stream(self):
        assert ck.chunk_content(b"", self.PARAMS) == []

    def test_stream_equals_buffer(self):
        data = rand_bytes(3_000_000, seed=8)
        params = ck.CbchParams(m=20, k=10, p=20, min_chunk=8192, max_chunk=256 << 10)
        assert ck.chunk_content(io.BytesIO(data), params) == ck.chunk_content(data, params)

    def test_streaming_chunker_any_split(self):
        data = rand_bytes(1_500_000, seed=9)
        params = ck.CbchParams(m=20, k=9, p=20, min_chunk=4096, max_chunk=100_000)
        want = ck.chunk_content(data, params)
        rng = np.random.default_rng(10)
        chunker = ck.ContentChunker(params)
        got = []
        i = 0
        while i < len(data):
            step = int(rng.integers(1, 80_000))
            got += chunker.feed(data[i : i + step])
            i += step
        got += chunker.finish()
        assert [(o, len(b)) for o, b in got] == [(d.offset, d.length) for d in want]
        assert all(ck.content_address(b) == d.id for (_, b), d in zip(got, want))

    def test_insertion_changes_few_chunks(self):
        # 100 = 5*p keeps the window grid aligned after the insertion, so only
        # chunks overlapping the insertion (plus forced-cut interaction) move.
        data = rand_bytes(8 << 20, seed=11)
        pos = 3_000_000
        mutated = data[:pos] + rand_bytes(100, seed=12) + data[pos:]
        before = ck.chunk_content(data, self.PARAMS)
        after = ck.chunk_content(mutated, self.PARAMS)
        new_ids = {d.id for d in after} - {d.id for d in before}
        assert len(new_ids) <= 3
        report = ck.similarity(before, after)
        assert report.ratio >= 1 - (3 * self.PARAMS.max_chunk) / len(mutated)

    def test_mean_size_monotone_in_k(self):
        def mean_size(k):
            params = ck.CbchParams(m=20, k=k, p=20, min_chunk=512, max_chunk=1 << 20)
            sizes = []
            for seed in range(50):
                descs = ck.chunk_content(rand_bytes(1 << 20, seed=100 + seed), params)
                sizes.extend(d.length for d in descs)
            return sum(sizes) / len(sizes)

        means = [mean_size(k) for k in (6, 8, 10, 12)]
        assert all(a <= b for a, b in zip(means, means[1:]))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            ck.CbchParams(m=0)
        with pytest.raises(ValueError):
            ck.CbchParams(p=21)  # p > m
        with pytest.raises(ValueError):
            ck.CbchParams(k=31)
        with pytest.raises(ValueError):
            ck.CbchParams(min_chunk=4096, max_chunk=4096)


class TestRollingHash:
    def test_incremental_equals_recompute_all_positions(self):
        data = rand_bytes(1024, seed=13)
        m = 20
        rh = ck.RollingHash(data[:m])
        assert rh.value == ck.rolling_window_hash(data[:m])
        for i in range(1, len(data) - m + 1):
            got = rh.slide(data[i - 1], data[i + m - 1])
            assert got == ck.rolling_window_hash(data[i : i + m])

    def test_position_independence(self):
        window = rand_bytes(32, seed=14)
        stream = rand_bytes(500, seed=15) + window + rand_bytes(300, seed=16) + window
        h = ck.rolling_window_hash(window)
        assert ck.rolling_window_hash(stream[500:532]) == h
        assert ck.rolling_window_hash(stream[832:864]) == h

    def test_zero_window_vs_ff_window(self):
        # Evaluating the polynomial on both inputs: all-zero sums to 0, the
        # all-0xFF window is 255 * sum of multiplier powers, nonzero for
        # these multipliers.
        m = 20
        zero = ck.rolling_window_hash(b"\x00" * m)
        ff = ck.rolling_window_hash(b"\xff" * m)
        mod = 1 << 64
        ha = sum(255 * pow(ck.MULT_A, j, mod) for j in range(m)) % mod
        hb = sum(255 * pow(ck.MULT_B, j, mod) for j in range(m)) % mod
        expect = ha ^ (((hb << 32) | (hb >> 32)) % mod)
        assert zero == 0
        assert ff == expect
        assert zero != ff

    def test_matches_scan_candidates(self):
        data = rand_bytes(4096, seed=17)
        m, k = 16, 7
        mask = (1 << k) - 1
        rh = ck.RollingHash(data[:m])
        values = [rh.value]
        for i in range(1, len(data) - m + 1):
            values.append(rh.slide(data[i - 1], data[i + m - 1]))
        expect = [i for i, v in enumerate(values) if v & mask == 0]
        assert expect == list(ck.scan_candidates(data, m, k, 1, 0))


class TestBackends:
    def test_compiled_and_pure_agree(self):
        rng = np.random.default_rng(18)
        for _ in range(25):
            n = int(rng.integers(0, 120_000))
            data = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
            m = int(rng.integers(1, 64))
            k = int(rng.integers(1, 16))
            p = 1 if rng.random() < 0.4 else int(rng.integers(1, m + 1))
            first = int(rng.integers(0, m + 3))
            assert ck.scan_candidates(data, m, k, p, first) == _scan_py.scan_candidates(
                data, m, k, p, first
            )

    def test_window_size_limit(self):
        with pytest.raises(ValueError):
            ck.scan_candidates(b"x" * 2000, 513, 8, 1, 0)
        with pytest.raises(ValueError):
            _scan_py.scan_candidates(b"x" * 2000, 513, 8, 1, 0)


class TestSimilarity:
    def test_identity(self):
        descs = ck.chunk_fixed(rand_bytes(10 << 20, seed=19), 1 << 20)
        assert ck.similarity(descs, descs).ratio == 1.0

    def test_one_of_ten_chunks_mutated(self):
        data = bytearray(rand_bytes(10 << 20, seed=20))
        ref = ck.chunk_fixed(bytes(data), 1 << 20)
        data[3 << 20 : 4 << 20] = rand_bytes(1 << 20, seed=21)
        cand = ck.chunk_fixed(bytes(data), 1 << 20)
        assert ck.similarity(ref, cand).ratio == pytest.approx(0.9)

    def test_one_byte_prepend_defeats_fixed_chunking(self):
        # Brute-force oracle: re-chunk the shifted stream and compare ids.
        data = rand_bytes(4 << 20, seed=22)
        ref = ck.chunk_fixed(data, 1 << 20)
        cand = ck.chunk_fixed(b"\x01" + data, 1 << 20)
        assert ck.similarity(ref, cand).ratio == 0.0

    def test_empty_candidate(self):
        report = ck.similarity([], [])
        assert report.ratio == 0.0 and report.total_bytes == 0

    def test_duplicate_candidate_chunks_each_count(self):
        block = rand_bytes(1 << 20, seed=23)
        ref = ck.chunk_fixed(block, 1 << 20)
        cand = ck.chunk_fixed(block + block, 1 << 20)
        report = ck.similarity(ref, cand)
        assert report.shared_bytes == 2 << 20
        assert report.ratio == 1.0


@settings(max_examples=25, deadline=None)
@given(
    data=st.binary(max_size=60_000),
    m=st.integers(1, 48),
    k=st.integers(1, 12),
    overlap=st.booleans(),
    min_chunk=st.integers(1, 3000),
)
def test_contiguity_property(data, m, k, overlap, min_chunk):
    params = ck.CbchParams(
        m=m, k=k, p=1 if overlap else m, min_chunk=min_chunk, max_chunk=min_chunk + 5000
    )
    descs = ck.chunk_content(data, params)
    assert contiguous(descs, len(data))
    rebuilt = b"".join(data[d.offset : d.offset + d.length] for d in descs)
    assert rebuilt == data
    for d in descs:
        assert d.id == ck.content_address(data[d.offset : d.offset + d.length])


@settings(max_examples=25, deadline=None)
@given(data=st.binary(max_size=60_000), chunk_size=st.integers(1, 9000))
def test_fixed_contiguity_property(data, chunk_size):
    descs = ck.chunk_fixed(data, chunk_size)
    assert contiguous(descs, len(data))
    assert all(d.length == chunk_size for d in descs[:-1])
