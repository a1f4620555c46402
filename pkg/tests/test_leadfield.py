import numpy as np
import pytest
from scipy.special import eval_legendre, lpmv

from dipcodec.geometry import ElectrodeArray, HeadModel, build_grid, electrodes_from_labels
from dipcodec.leadfield import (ForwardModel, LeadFieldError, leadfield_concentric,
                                leadfield_concentric_batch, leadfield_single_sphere,
                                shell_factors)

R = 0.092
SIGMA = 0.33


def legendre_oracle(location, electrodes, radius=R, sigma=SIGMA, n_terms=300):
    """Homogeneous-sphere surface potential as a plain Legendre sum.

    V = 1/(4 pi sigma R^2) sum_n (2n+1)/n t^(n-1) [n P_n(x) q_r - P_n^1(x) q_u],
    with P_n^1 carrying the Condon-Shortley phase (scipy's lpmv convention).
    """
    r0 = np.asarray(location, dtype=float)
    b = np.linalg.norm(r0)
    z = r0 / b if b > 0 else np.array([0.0, 0.0, 1.0])
    n = np.arange(1, n_terms + 1)
    out = np.zeros((len(electrodes), 3))
    for i, e in enumerate(electrodes):
        eh = e / np.linalg.norm(e)
        x = float(np.clip(eh @ z, -1, 1))
        tang = eh - x * z
        s = np.linalg.norm(tang)
        u = tang / s if s > 1e-15 else np.zeros(3)
        w = (2 * n + 1) / n * (b / radius) ** (n - 1)
        radial = np.sum(w * n * eval_legendre(n, x))
        tangential = -np.sum(w * lpmv(1, n, x))
        out[i] = radial * z + tangential * u
    return out / (4 * np.pi * sigma * radius ** 2)


def random_direction(rng, k):
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def sphere():
    return HeadModel.single_sphere(R, SIGMA)


class TestSingleSphere:
    def test_linearity(self, sphere, electrodes19, rng):
        K = leadfield_single_sphere(sphere, electrodes19, [0.01, -0.02, 0.03])
        g1, g2 = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_array_equal(K @ np.zeros(3), 0.0)
        np.testing.assert_allclose(K @ (2 * g1), 2 * (K @ g1), rtol=1e-15)
        np.testing.assert_allclose(K @ (3 * g1 - 2 * g2), 3 * K @ g1 - 2 * K @ g2,
                                   rtol=1e-12, atol=1e-12 * np.abs(K).max())

    def test_centered_radial_dipole(self, sphere, electrodes19):
        K = leadfield_single_sphere(sphere, electrodes19, [0, 0, 0])
        cos_t = electrodes19.positions[:, 2] / R
        C = 3 / (4 * np.pi * SIGMA * R ** 2)
        np.testing.assert_allclose(K[:, 2], C * cos_t, rtol=1e-12, atol=1e-12 * C)
        oracle = legendre_oracle([0, 0, 0], electrodes19.positions, n_terms=200)
        np.testing.assert_allclose(K, oracle, rtol=1e-8, atol=1e-8 * C)

    def test_matches_series_oracle(self, sphere, rng):
        pts = random_direction(rng, 50) * R
        locs = random_direction(rng, 50) * R * rng.uniform(0, 0.85, size=(50, 1))
        worst = 0.0
        for e, loc in zip(pts, locs):
            arr = ElectrodeArray(np.stack([e, -e]), ("a", "b"))
            K = leadfield_single_sphere(sphere, arr, loc)[0]
            ref = legendre_oracle(loc, [e], n_terms=400)[0]
            worst = max(worst, np.linalg.norm(K - ref) / np.linalg.norm(ref))
        assert worst <= 1e-8

    def test_outside(self, sphere, electrodes19):
        with pytest.raises(LeadFieldError):
            leadfield_single_sphere(sphere, electrodes19, [0, 0, R])


class TestConcentric:
    def test_homogeneous_shells_match_closed_form(self, sphere, electrodes19, rng):
        flat = HeadModel(((0.08, SIGMA), (0.081, SIGMA), (0.086, SIGMA), (R, SIGMA)))
        np.testing.assert_allclose(shell_factors(flat, 50), (2 * np.arange(1, 51) + 1) /
                                   np.arange(1, 51), rtol=1e-12)
        for loc in random_direction(rng, 5) * 0.07:
            a = leadfield_concentric(flat, electrodes19, loc)
            b = leadfield_single_sphere(sphere, electrodes19, loc)
            assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-6

    def test_skull_attenuation(self, head4, electrodes19, rng):
        low = HeadModel(tuple((r, s / 10 if i == 2 else s)
                              for i, (r, s) in enumerate(head4.shells)))
        # centred dipole: one Legendre order, so every electrode scales alike
        for q in rng.normal(size=(3, 3)):
            v0 = leadfield_concentric(head4, electrodes19, [0, 0, 0]) @ q
            v1 = leadfield_concentric(low, electrodes19, [0, 0, 0]) @ q
            assert np.all(np.abs(v1) < np.abs(v0))
        # eccentric dipoles: smearing can move the zero line, so compare
        # overall field strength
        for loc in random_direction(rng, 5) * 0.05:
            q = rng.normal(size=3)
            v0 = leadfield_concentric(head4, electrodes19, loc) @ q
            v1 = leadfield_concentric(low, electrodes19, loc) @ q
            assert np.linalg.norm(v1) < np.linalg.norm(v0)
            assert np.abs(v1).max() < np.abs(v0).max()
        assert np.all(shell_factors(low, 100) < shell_factors(head4, 100))

    def test_rotation(self, head4, electrodes19, rng):
        from test_geometry import random_rotation
        Q = random_rotation(rng)
        loc = np.array([0.01, 0.03, -0.02])
        K = leadfield_concentric(head4, electrodes19, loc)
        rot = ElectrodeArray(electrodes19.positions @ Q.T, electrodes19.labels)
        K2 = leadfield_concentric(head4, rot, Q @ loc)
        np.testing.assert_allclose(K2 @ Q, K, rtol=1e-9, atol=1e-9 * np.abs(K).max())

    def test_batch_bit_identical(self, head4, electrodes19):
        locs = build_grid(head4, 33).locations
        batch = leadfield_concentric_batch(head4, electrodes19, locs)
        for k in (0, 7, 32):
            np.testing.assert_array_equal(batch[k], leadfield_concentric(head4, electrodes19,
                                                                         locs[k]))

    def test_wrong_kind(self, sphere, electrodes19):
        with pytest.raises(LeadFieldError):
            leadfield_concentric(sphere, electrodes19, [0, 0, 0])


class TestAssemble:
    def test_single_and_pair(self, small_model):
        one = small_model.assemble([3]).matrix
        two = small_model.assemble([3, 9]).matrix
        np.testing.assert_array_equal(one, two[:, :3])
        np.testing.assert_array_equal(two[:, 3:], small_model.assemble([9]).matrix)
        assert two.shape == (19, 6)

    def test_cache_and_digest(self, small_model):
        a = small_model.assemble([5])
        b = small_model.assemble([5])
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert a.model_digest == small_model.digest

    def test_errors(self, small_model):
        with pytest.raises(LeadFieldError):
            small_model.assemble([1, 1])
        with pytest.raises(LeadFieldError):
            small_model.assemble([len(small_model.grid)])

    def test_digest_depends_on_geometry(self, head4, electrodes19):
        g = build_grid(head4, 33)
        a = ForwardModel(head4, electrodes19, g).digest
        other = electrodes_from_labels(["Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3",
                                        "Cz", "C4", "T8", "P7", "P3", "Pz", "P4", "P8", "O1",
                                        "Oz"])
        assert ForwardModel(head4, other, g).digest != a
        assert ForwardModel(head4, electrodes19, g, scale=2.0).digest != a
