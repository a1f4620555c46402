import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from dipcodec.arx import (MAX_INNOVATION_BITS, ArxBlockCode, ArxError, ClusterMap, Codebook,
                          allocate, arx_fit, cluster_channels, decode_arx, encode_arx,
                          lloyd_max)
from dipcodec.bitio import BitReader, BitWriter

GAUSS_3BIT_TABLE = 0.03454


def gaussian_lloyd_oracle(bits, iters=2000):
    """Lloyd-Max optimum for N(0, 1) from closed-form cell moments."""
    L = 1 << bits
    q = np.linspace(-2, 2, L)
    for _ in range(iters):
        t = np.concatenate([[-np.inf], 0.5 * (q[1:] + q[:-1]), [np.inf]])
        mass = norm.cdf(t[1:]) - norm.cdf(t[:-1])
        q = (norm.pdf(t[:-1]) - norm.pdf(t[1:])) / mass
    t = np.concatenate([[-np.inf], 0.5 * (q[1:] + q[:-1]), [np.inf]])
    a, b = t[:-1], t[1:]
    fa, fb = np.where(np.isinf(a), 0, a), np.where(np.isinf(b), 0, b)
    pa, pb = fa * norm.pdf(a), fb * norm.pdf(b)
    mass = norm.cdf(b) - norm.cdf(a)
    second = mass + pa - pb                     # integral of x^2 over the cell
    first = norm.pdf(a) - norm.pdf(b)
    return float(np.sum(second - 2 * q * first + q ** 2 * mass))


def mse(x, book):
    return float(np.mean((x - book.value(book.quantize(x))) ** 2))


class TestLloydMax:
    def test_oracle_matches_table(self):
        assert gaussian_lloyd_oracle(3) == pytest.approx(GAUSS_3BIT_TABLE, abs=5e-5)

    def test_two_point(self):
        book = lloyd_max(np.array([-1.0, 1.0] * 50), 1)
        np.testing.assert_array_equal(book.levels, [-1, 1])

    def test_constant(self):
        x = np.full(40, 2.5)
        book = lloyd_max(x, 3)
        assert book.levels.size == 1
        assert mse(x, book) == 0.0

    def test_gaussian_three_bits(self):
        x = np.random.default_rng(5).normal(size=200_000)
        d = mse(x, lloyd_max(x, 3))
        assert abs(d - gaussian_lloyd_oracle(3)) <= 0.05 * gaussian_lloyd_oracle(3)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_history_descends(self, seed, bits):
        rng = np.random.default_rng(seed)
        x = rng.standard_t(3, size=500)
        book = lloyd_max(x, bits)
        h = np.array(book.history)
        assert np.all(np.diff(h) <= 1e-12 * h[:-1] + 1e-15)
        assert book.levels.size <= 1 << bits

    def test_bad_arguments(self):
        with pytest.raises(ArxError):
            lloyd_max([], 2)
        with pytest.raises(ArxError):
            lloyd_max([1.0, 2.0], 0)
        with pytest.raises(ArxError):
            lloyd_max([1.0, 2.0], MAX_INNOVATION_BITS + 1)

    def test_codebook_serialisation(self):
        book = lloyd_max(np.random.default_rng(2).normal(size=300), 3)
        w = BitWriter()
        book.write(w)
        assert w.nbits == book.nbits
        back = Codebook.read(BitReader(w.bits()))
        np.testing.assert_array_equal(back.levels, book.levels)

    def test_malformed_codebook(self):
        w = BitWriter()
        w.write_uint(2, 16)
        w.write_f32(1.0)
        w.write_f32(-1.0)
        with pytest.raises(ArxError):
            Codebook.read(BitReader(w.bits()))


class TestClustering:
    def test_identical_channels(self):
        E = np.tile(np.arange(32.0), (10, 1))
        cmap = cluster_channels(E, 3, 2)
        flat = cmap.centroid_channels
        assert len(set(flat)) == 6
        assert all(h == 0 for h in cmap.history)

    def test_two_groups(self, rng):
        base = rng.normal(size=(2, 64)) * 50
        labels = np.array([0, 1, 0, 0, 1, 1, 0, 1, 1, 0])
        E = base[labels] + rng.normal(size=(10, 64))
        cmap = cluster_channels(E, 2, 2, seed=3)
        a = cmap.assignments
        assert np.array_equal(a, labels) or np.array_equal(a, 1 - labels)

    def test_deterministic(self, rng):
        E = rng.normal(size=(19, 50))
        a, b = cluster_channels(E, 5, 2, seed=9), cluster_channels(E, 5, 2, seed=9)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.centroids == b.centroids

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 3))
    def test_objective_and_sizes(self, seed, K, Nc):
        rng = np.random.default_rng(seed)
        E = rng.normal(size=(16, 24)) * rng.uniform(0.1, 10, size=(16, 1))
        cmap = cluster_channels(E, K, Nc, seed)
        h = np.array(cmap.history)
        assert np.all(np.diff(h) <= 1e-9 * max(h[0], 1))
        assert np.all(np.bincount(cmap.assignments, minlength=K) >= Nc)
        cmap.validate()

    def test_too_many_centroids(self):
        with pytest.raises(ArxError):
            cluster_channels(np.zeros((5, 8)), 3, 2)

    def test_map_serialisation(self, rng):
        cmap = cluster_channels(rng.normal(size=(19, 30)), 5, 2, seed=70000)
        w = BitWriter()
        cmap.write(w)
        assert w.nbits == cmap.nbits(19)
        back = ClusterMap.read(BitReader(w.bits()), 19)
        assert back.seed == 70000 & 0xFFFF
        np.testing.assert_array_equal(back.assignments, cmap.assignments)
        assert back.centroids == cmap.centroids


class TestArxFit:
    def test_indicator(self, rng):
        X = rng.normal(size=(2, 100))
        np.testing.assert_allclose(arx_fit(X[1], X), [0, 1], atol=1e-12)

    def test_orthogonal_target(self):
        t = np.arange(64)
        X = np.stack([np.sin(2 * np.pi * t / 64), np.cos(2 * np.pi * t / 64)])
        np.testing.assert_allclose(arx_fit(np.cos(4 * np.pi * t / 64), X), 0, atol=1e-12)

    def test_normal_equations(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            Nc = int(rng.integers(1, 4))
            X = rng.normal(size=(Nc, 200))
            e = rng.normal(size=200)
            w = arx_fit(e, X)
            worst = max(worst, np.max(np.abs(X @ (X.T @ w - e))))
        assert worst <= 1e-8

    def test_rank_deficient(self, rng):
        x = rng.normal(size=50)
        w = arx_fit(3 * x, np.stack([x, x]))
        np.testing.assert_allclose(w, [1.5, 1.5], atol=1e-10)


def fixed_map(M):
    assign = np.array([0] * (M // 2) + [1] * (M - M // 2))
    return ClusterMap(assign, [[0], [M // 2]])


def round_trip(code, M, N):
    w = BitWriter()
    code.write(w)
    return ArxBlockCode.read(BitReader(w.bits()), M, N)


class TestEncode:
    def test_exact_multiples(self, rng):
        M, N = 8, 128
        src = np.round(rng.normal(size=(2, N)) * 100)
        gains = np.array([1, 0.5, -2, 3, 1, 1.5, -1, 0.25])
        E = np.concatenate([gains[:4, None] * src[0], gains[4:, None] * src[1]])
        cmap = fixed_map(M)
        code, rec = encode_arx(E, cmap, 0, 10 ** 7)
        cent_hat = code.centroids.decode()
        np.testing.assert_array_equal(rec[[0, 4]], cent_hat)
        # six weights fit inside sixteen levels, so each keeps its float32 value
        for j, l in enumerate(cmap.predicted_channels):
            c = cent_hat[0 if l < 4 else 1]
            w_raw = arx_fit(E[l], c[None, :])[0]
            w_hat = code.weight_book.value(code.weight_idx[j])[0]
            assert w_hat == np.float32(w_raw)
            s = src[0 if l < 4 else 1]
            bound = abs(w_hat - gains[l]) * np.linalg.norm(c) \
                + abs(gains[l]) * np.linalg.norm(c - s)
            assert np.linalg.norm(rec[l] - E[l]) <= bound + 1e-9

    def test_innovation_bits_reduce_error(self, rng):
        E = np.round(rng.normal(size=(10, 200)) * 30)
        cmap = cluster_channels(E, 2, 2)
        errs = []
        for b in range(2, 7):
            _, rec = encode_arx(E, cmap, b, 10 ** 6)
            pred = cmap.predicted_channels
            errs.append(np.mean((rec[pred] - E[pred]) ** 2, axis=1))
        errs = np.array(errs)
        assert np.all(np.diff(errs, axis=0) < 0)

    def test_zero_residual(self):
        E = np.zeros((6, 32))
        code, rec = encode_arx(E, fixed_map(6), 3, 1000)
        assert code.centroids.zero
        np.testing.assert_array_equal(rec, 0.0)
        np.testing.assert_array_equal(decode_arx(round_trip(code, 6, 32), 6, 32), 0.0)

    @pytest.mark.parametrize("b,budget", [(0, 300), (3, 2000), (6, 10 ** 6)])
    def test_closed_loop(self, rng, b, budget):
        M, N = 12, 64
        E = np.round(rng.normal(size=(M, N)) * 40)
        cmap = cluster_channels(E, 3, 2, seed=1)
        code, rec = encode_arx(E, cmap, b, budget)
        np.testing.assert_array_equal(decode_arx(code, M, N), rec)
        np.testing.assert_array_equal(decode_arx(round_trip(code, M, N), M, N), rec)

    def test_allocation_monotone(self, rng):
        cmap = cluster_channels(rng.normal(size=(19, 64)), 5, 2)
        prev = (0, 0)
        for R in range(0, 60000, 500):
            b, cent = allocate(R, 19, 64, cmap)
            assert b >= prev[0] and cent >= prev[1]
            prev = (b, cent)
