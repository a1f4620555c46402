import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipcodec.bitio import BitReader, BitWriter
from dipcodec.moments import (CodedMoments, decode_moments, default_levels, dwt_haar,
                              encode_moments, idwt_haar, row_budget)


def haar_matrix(N, levels):
    """Analysis matrix built from explicit scaled box and step functions."""
    rows = []
    width = N >> levels
    span = 1 << levels
    for k in range(width):
        v = np.zeros(N)
        v[k * span:(k + 1) * span] = 1.0 / np.sqrt(span)
        rows.append(v)
    for lev in range(levels, 0, -1):
        span = 1 << lev
        for k in range(N // span):
            v = np.zeros(N)
            v[k * span:k * span + span // 2] = 1.0
            v[k * span + span // 2:(k + 1) * span] = -1.0
            rows.append(v / np.sqrt(span))
    return np.array(rows)


def prd(x, y):
    return 100 * np.linalg.norm(x - y) / np.linalg.norm(x)


class TestLevels:
    @pytest.mark.parametrize("N,L", [(1024, 7), (256, 5), (8, 0), (1, 0), (96, 3), (100, 2),
                                     (1000, 3)])
    def test_default(self, N, L):
        assert default_levels(N) == L


class TestHaar:
    @pytest.mark.parametrize("N,L", [(16, 2), (64, 3), (96, 5), (8, 3)])
    def test_matches_matrix_oracle(self, rng, N, L):
        x = rng.normal(size=N)
        W = haar_matrix(N, L)
        np.testing.assert_allclose(W @ W.T, np.eye(N), atol=1e-12)
        np.testing.assert_allclose(dwt_haar(x, L), W @ x, atol=1e-12)

    def test_constant_has_no_detail(self):
        c = dwt_haar(np.full(64, 2.0), 3)
        np.testing.assert_allclose(c[8:], 0.0, atol=1e-14)
        np.testing.assert_allclose(c[:8], 2.0 * np.sqrt(8))

    def test_energy_and_inverse(self, rng):
        x = rng.normal(size=(3, 128))
        c = dwt_haar(x, 4)
        np.testing.assert_allclose(np.sum(c ** 2, axis=1), np.sum(x ** 2, axis=1), rtol=1e-12)
        np.testing.assert_allclose(idwt_haar(c, 4), x, atol=1e-12)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            dwt_haar(np.zeros(20), 3)
        with pytest.raises(ValueError):
            idwt_haar(np.zeros(20), 3)


class TestCoder:
    def test_sinusoid(self):
        t = np.arange(1024) / 1000.0
        G = np.stack([np.sin(2 * np.pi * f * t + p) for f, p in [(3, 0), (7, 1), (11, 2)]])
        cm = encode_moments(G, 3.0)
        assert all(r.bits.size <= row_budget(1024, 3.0) for r in cm.rows)
        for g, h in zip(G, decode_moments(cm)):
            assert prd(g, h) < 5.0

    def test_higher_rate_is_better(self, rng):
        G = np.cumsum(rng.normal(size=(3, 512)), axis=1)
        errs = [np.linalg.norm(G - decode_moments(encode_moments(G, r))) for r in (0.5, 1, 2, 4)]
        assert errs == sorted(errs, reverse=True)

    def test_zero_rows(self):
        G = np.zeros((3, 64))
        G[1] = np.linspace(-1, 1, 64)
        cm = encode_moments(G, 2.0)
        assert cm.rows[0].scale == 0 and cm.rows[0].bits.size == 0
        out = decode_moments(cm)
        np.testing.assert_array_equal(out[[0, 2]], 0.0)
        assert prd(G[1], out[1]) < 10

    def test_long_budget_is_near_exact(self, rng):
        G = rng.normal(size=(2, 128))
        out = decode_moments(encode_moments(G, 40.0))
        np.testing.assert_allclose(out, G, atol=1e-4 * np.abs(G).max())

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            encode_moments(np.ones((3, 16)), 0)

    def test_length_mismatch(self):
        cm = encode_moments(np.ones((3, 16)))
        with pytest.raises(ValueError):
            decode_moments(cm, N=32)

    def test_serialisation(self, rng):
        G = rng.normal(size=(3, 256))
        cm = encode_moments(G, 3.0)
        w = BitWriter()
        cm.write(w)
        assert w.nbits == cm.nbits
        back = CodedMoments.read(BitReader(w.bits()), 3, 256)
        for a, b in zip(cm.rows, back.rows):
            assert a.scale == b.scale and a.n0 == b.n0
            np.testing.assert_array_equal(a.bits, b.bits)
        np.testing.assert_array_equal(decode_moments(back), decode_moments(cm))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([32, 64, 128]))
    def test_embedded(self, seed, N):
        rng = np.random.default_rng(seed)
        x = np.cumsum(rng.normal(size=(1, N)), axis=1)
        cm = encode_moments(x, 16.0)
        total = cm.rows[0].bits.size
        errs = [np.linalg.norm(x - decode_moments(cm, max_bits=b))
                for b in range(0, total + 1, max(1, total // 40))]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        prefix = decode_moments(encode_moments(x, 4.0))
        np.testing.assert_allclose(prefix, decode_moments(cm, max_bits=row_budget(N, 4.0)),
                                   atol=1e-12)
