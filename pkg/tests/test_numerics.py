import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resgait.numerics import (
    NonFiniteInputError,
    NotPositiveSemidefiniteError,
    RngStream,
    SymMatrix,
    gaussian_sample,
    sqrtm_psd,
    sym_eig,
)


def random_symmetric(rng: np.random.Generator, dim: int) -> SymMatrix:
    a = rng.standard_normal((dim, dim))
    return SymMatrix(a + a.T)


class TestSymMatrix:
    def test_storage_exactly_symmetric(self):
        a = np.random.default_rng(0).standard_normal((5, 5))
        m = SymMatrix(a)
        assert np.array_equal(m.entries, m.entries.T)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            SymMatrix(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        bad = np.eye(3)
        bad[1, 2] = np.nan
        with pytest.raises(NonFiniteInputError):
            SymMatrix(bad)

    def test_rejects_oversized(self):
        with pytest.raises(ValueError):
            SymMatrix(np.eye(257))


class TestSymEig:
    def test_identity(self):
        w, v = sym_eig(SymMatrix.identity(3))
        assert np.allclose(w, [1.0, 1.0, 1.0])
        assert np.allclose(v @ v.T, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        w, v = sym_eig(SymMatrix.diagonal([4.0, 1.0]))
        assert np.allclose(w, [4.0, 1.0])
        # Axis-aligned eigenvectors up to sign.
        assert np.allclose(np.abs(v), np.eye(2), atol=1e-12)

    def test_descending_order(self):
        m = random_symmetric(np.random.default_rng(3), 12)
        w, _ = sym_eig(m)
        assert np.all(np.diff(w) <= 0)

    def test_reconstruction_oracle(self):
        m = random_symmetric(np.random.default_rng(7), 8)
        w, v = sym_eig(m)
        rebuilt = (v * w) @ v.T
        rel = np.linalg.norm(rebuilt - m.entries) / np.linalg.norm(m.entries)
        assert rel < 1e-10

    def test_orthonormal_eigenvectors(self):
        for seed in range(10):
            m = random_symmetric(np.random.default_rng(seed), 6)
            _, v = sym_eig(m)
            assert np.linalg.norm(v.T @ v - np.eye(6)) < 1e-10


class TestSqrtmPsd:
    def test_identity(self):
        r = sqrtm_psd(SymMatrix.identity(4))
        assert np.allclose(r.entries, np.eye(4), atol=1e-12)

    def test_diagonal(self):
        r = sqrtm_psd(SymMatrix.diagonal([4.0, 9.0]))
        assert np.allclose(r.entries, np.diag([2.0, 3.0]), atol=1e-12)

    def test_multiplication_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((6, 6))
        m = SymMatrix(a @ a.T)
        r = sqrtm_psd(m)
        rel = np.linalg.norm(r.entries @ r.entries - m.entries) / np.linalg.norm(m.entries)
        assert rel < 1e-8
        w, _ = sym_eig(r)
        assert w.min() >= 0.0

    def test_scalar_matrix_exact(self):
        for c in (0.25, 1.0, 7.5):
            r = sqrtm_psd(SymMatrix(c * np.eye(5)))
            assert np.abs(r.entries - np.sqrt(c) * np.eye(5)).max() < 1e-12

    def test_rejects_negative_definite(self):
        with pytest.raises(NotPositiveSemidefiniteError):
            sqrtm_psd(SymMatrix.diagonal([1.0, -0.5]))

    def test_clamps_tiny_negative(self):
        m = SymMatrix.diagonal([1.0, -5e-11])
        r = sqrtm_psd(m)
        assert r.entries[1, 1] == 0.0


class TestRngStream:
    def test_same_seed_identical(self):
        a = RngStream(12345, 7).gaussian(16)
        b = RngStream(12345, 7).gaussian(16)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(12345, 7).gaussian(16)
        b = RngStream(12345, 8).gaussian(16)
        assert not np.array_equal(a, b)

    def test_law_of_large_numbers(self):
        x = RngStream(99, 0).gaussian(1_000_000)
        assert abs(x.mean()) < 0.01
        assert abs(x.std() - 1.0) < 0.01

    def test_call_counter(self):
        s = RngStream(1, 2)
        s.gaussian(3)
        s.uniform(0.0, 1.0)
        assert s.calls == 2

    def test_gaussian_sample_wrapper(self):
        s1, s2 = RngStream(5, 1), RngStream(5, 1)
        assert np.array_equal(gaussian_sample(s1, 8), s2.gaussian(8))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            RngStream(0, 0).gaussian(0)

    @given(st.integers(0, 2**32), st.integers(0, 2**32))
    @settings(max_examples=25, deadline=None)
    def test_reproducible_for_any_ids(self, seed, stream):
        a = RngStream(seed, stream).gaussian(4)
        b = RngStream(seed, stream).gaussian(4)
        assert np.array_equal(a, b)
