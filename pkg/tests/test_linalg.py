import numpy as np
import pytest
from numpy.testing import assert_allclose

from espproj.linalg import (
    ToleranceConfig,
    affine_projection_rows,
    in_row_space,
    orth_null_basis,
    rank,
    row_space_basis,
)


class TestToleranceConfig:
    def test_defaults(self):
        tc = ToleranceConfig()
        assert tc.rank_tol == 1e-9
        assert tc.feas_tol == 1e-8
        assert tc.eq_tol == 1e-7
        assert tc.uniq_tol == 1e-8

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ToleranceConfig(feas_tol=0.0)
        with pytest.raises(ValueError):
            ToleranceConfig(eq_tol=-1e-9)

    def test_rejects_loose_rank_tol(self):
        with pytest.raises(ValueError):
            ToleranceConfig(rank_tol=1e-3)


class TestRank:
    def test_near_singular_is_rank_one(self):
        # sigma_2/sigma_1 = 1e-12 < rank_tol, so the tiny direction is noise
        assert rank(np.array([[1.0, 0.0], [0.0, 1e-12]]), tol=1e-9) == 1

    def test_identity(self):
        assert rank(np.eye(4)) == 4

    def test_zero_and_empty(self):
        assert rank(np.zeros((3, 2))) == 0
        assert rank(np.zeros((0, 5))) == 0

    def test_scale_invariance(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((4, 6))
        m[3] = m[0] + m[1]          # force rank 3
        assert rank(m) == 3
        assert rank(1e8 * m) == 3
        assert rank(1e-8 * m) == 3


class TestOrthNullBasis:
    def test_single_row(self):
        n = orth_null_basis(np.array([[1.0, 0.0, 0.0]]))
        assert n.shape == (3, 2)
        # orthonormal, in the e2/e3 plane, sign-fixed
        assert_allclose(n.T @ n, np.eye(2), atol=1e-12)
        assert_allclose(n[0], [0.0, 0.0], atol=1e-12)
        for j in range(2):
            first_nz = n[np.abs(n[:, j]) > 1e-9, j][0]
            assert first_nz > 0

    def test_full_rank_matrix_has_empty_basis(self):
        assert orth_null_basis(np.eye(3)).shape == (3, 0)

    def test_zero_matrix_gives_identity(self):
        assert_allclose(orth_null_basis(np.zeros((2, 3))), np.eye(3))

    def test_annihilation_property(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m = rng.standard_normal((rng.integers(1, 5), rng.integers(2, 7)))
            n = orth_null_basis(m)
            assert n.shape[1] == m.shape[1] - rank(m)
            if n.shape[1]:
                assert np.abs(m @ n).max() < 1e-10
                assert_allclose(n.T @ n, np.eye(n.shape[1]), atol=1e-12)

    def test_deterministic(self):
        m = np.random.default_rng(3).standard_normal((2, 5))
        a = orth_null_basis(m)
        b = orth_null_basis(m.copy())
        assert np.array_equal(a, b)


class TestAffineProjectionRows:
    def test_cube_facet_row(self):
        # face {x1 = 1} of the unit cube, internal coordinate y free:
        # the only y-annihilating combination is the row itself
        w, off = affine_projection_rows(
            np.array([[1.0, 0.0]]), np.array([[0.0]]), np.array([1.0])
        )
        assert w.shape == (1, 2)
        assert_allclose(w, [[1.0, 0.0]], atol=1e-12)
        assert_allclose(off, [1.0], atol=1e-12)

    def test_no_pure_x_combination(self):
        # single row with nonzero y part: nothing survives projection
        w, off = affine_projection_rows(
            np.array([[1.0, 0.0]]), np.array([[1.0]]), np.array([1.0])
        )
        assert w.shape == (0, 2)
        assert off.shape == (0,)

    def test_pair_eliminates_y(self):
        # x1 + y = 2 and x2 - y = 0 combine to x1 + x2 = 2
        w, off = affine_projection_rows(
            np.array([[1.0, 0.0], [0.0, 1.0]]),
            np.array([[1.0], [-1.0]]),
            np.array([2.0, 0.0]),
        )
        assert w.shape == (1, 2)
        scaled = np.append(w[0], off[0]) / w[0, 0]
        assert_allclose(scaled, [1.0, 1.0, 2.0], atol=1e-10)

    def test_empty_equality_set(self):
        w, off = affine_projection_rows(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0))
        assert w.shape == (0, 3)


class TestRowSpace:
    def test_basis_and_membership(self):
        rows = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        basis = row_space_basis(rows)
        assert basis.shape == (2, 3)
        assert in_row_space(np.array([3.0, -4.0, 0.0]), basis)
        assert not in_row_space(np.array([0.0, 0.0, 1.0]), basis)

    def test_empty(self):
        basis = row_space_basis(np.zeros((0, 4)))
        assert basis.shape == (0, 4)
        assert in_row_space(np.zeros(4), basis)
        assert not in_row_space(np.array([1.0, 0, 0, 0]), basis)
