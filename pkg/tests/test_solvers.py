import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import linprog

from espproj.linalg import ToleranceConfig
from espproj.solvers import (
    LinearProgram,
    SolverFailure,
    feasible_point,
    solve_lp,
    solve_qp,
)


def box_lp(c):
    """max c'z over the unit square [0,1]^2."""
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    return LinearProgram(np.asarray(c, float), a, b)


class TestSolveLp:
    def test_box_corner(self):
        rep = solve_lp(box_lp([1.0, 1.0]))
        assert rep.status == "optimal"
        assert_allclose(rep.z_star, [1.0, 1.0], atol=1e-9)
        assert rep.objective_value == pytest.approx(2.0, abs=1e-9)
        assert set(rep.active_set) == {0, 2}
        assert not rep.multiplicity_flag

    def test_free_variable_negative_optimum(self):
        # max -z over z >= -3 (encoded as -z <= 3)
        rep = solve_lp(LinearProgram([-1.0], [[-1.0]], [3.0]))
        assert rep.status == "optimal"
        assert_allclose(rep.z_star, [-3.0], atol=1e-9)

    def test_equality_constraint(self):
        # max z1 s.t. z1 + z2 = 1, 0 <= z2 <= 0.25
        lp = LinearProgram(
            [1.0, 0.0],
            [[0.0, 1.0], [0.0, -1.0]],
            [0.25, 0.0],
            a_eq=[[1.0, 1.0]],
            b_eq=[1.0],
        )
        rep = solve_lp(lp)
        assert_allclose(rep.z_star, [1.0, 0.0], atol=1e-9)

    def test_infeasible(self):
        lp = LinearProgram([1.0], [[1.0], [-1.0]], [1.0, -2.0])  # z <= 1, z >= 2
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        rep = solve_lp(LinearProgram([1.0, 0.0], [[0.0, 1.0]], [1.0]))
        assert rep.status == "unbounded"

    def test_duplicate_rows_flag_may_fire(self):
        # max z s.t. z <= 1 twice: vertex is over-determined
        rep = solve_lp(LinearProgram([1.0], [[1.0], [1.0]], [1.0, 1.0]))
        assert rep.status == "optimal"
        assert rep.z_star[0] == pytest.approx(1.0, abs=1e-9)
        assert set(rep.active_set) == {0, 1}
        assert rep.multiplicity_flag

    def test_simple_vertex_no_flag(self):
        rep = solve_lp(box_lp([1.0, -1.0]))
        assert not rep.multiplicity_flag
        assert set(rep.active_set) == {0, 3}

    def test_degenerate_classic(self):
        # Beale-style degenerate problem; guard must not hang
        c = np.array([0.75, -150.0, 0.02, -6.0])
        a = np.array(
            [
                [0.25, -60.0, -0.04, 9.0],
                [0.5, -90.0, -0.02, 3.0],
                [0.0, 0.0, 1.0, 0.0],
                [-1.0, 0.0, 0.0, 0.0],
                [0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, 0.0],
                [0.0, 0.0, 0.0, -1.0],
            ]
        )
        b = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        rep = solve_lp(LinearProgram(c, a, b))
        assert rep.status == "optimal"
        assert rep.objective_value == pytest.approx(0.05, abs=1e-8)

    def test_against_scipy_on_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(60):
            n = int(rng.integers(2, 6))
            m = int(rng.integers(n + 1, 3 * n + 4))
            a = rng.standard_normal((m, n))
            a /= np.linalg.norm(a, axis=1, keepdims=True)
            b = rng.uniform(0.2, 2.0, size=m)
            # contain the feasible set: add a box so the LP is bounded
            a = np.vstack([a, np.eye(n), -np.eye(n)])
            b = np.concatenate([b, np.full(2 * n, 5.0)])
            c = rng.standard_normal(n)
            rep = solve_lp(LinearProgram(c, a, b))
            ref = linprog(-c, A_ub=a, b_ub=b, bounds=(None, None), method="highs")
            assert rep.status == "optimal"
            assert ref.status == 0
            assert rep.objective_value == pytest.approx(-ref.fun, abs=1e-7)
            assert (a @ rep.z_star - b).max() < 1e-8

    def test_active_set_is_exact(self):
        rep = solve_lp(box_lp([0.3, 1.0]))
        slack = np.abs(
            np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float) @ rep.z_star
            - np.array([1, 0, 1, 0], float)
        )
        for i in range(4):
            assert (i in rep.active_set) == (slack[i] <= 1e-7)


class TestFeasiblePoint:
    def test_finds_point(self):
        z = feasible_point([[1.0], [-1.0]], [2.0, 0.5], None, None)
        assert z is not None
        assert -0.5 <= z[0] <= 2.0

    def test_none_when_empty(self):
        assert feasible_point([[1.0], [-1.0]], [1.0, -2.0], None, None) is None


class TestSolveQp:
    def test_unconstrained_minimum_inside(self):
        # min 0.5||z||^2 - d'z with d inside the box: minimizer is d
        rep = solve_qp(
            np.eye(2), [0.25, 0.5],
            np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]]),
            np.array([1.0, 1, 1, 1]),
        )
        assert rep.status == "optimal"
        assert_allclose(rep.z_star, [0.25, 0.5], atol=1e-9)

    def test_projection_onto_halfplane(self):
        # project origin onto {z1 + z2 >= 1}: closest point (0.5, 0.5)
        rep = solve_qp(np.eye(2), np.zeros(2), [[-1.0, -1.0]], [-1.0])
        assert_allclose(rep.z_star, [0.5, 0.5], atol=1e-9)
        assert rep.objective_value == pytest.approx(0.25, abs=1e-10)

    def test_equality_constrained(self):
        rep = solve_qp(np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0),
                       a_eq=[[1.0, 1.0]], b_eq=[2.0])
        assert_allclose(rep.z_star, [1.0, 1.0], atol=1e-9)

    def test_duplicate_rows_active_set_reports_all(self):
        a = np.array([[-1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
        b = np.array([-1.0, -1.0, 0.0])
        rep = solve_qp(np.eye(2), np.zeros(2), a, b)
        assert_allclose(rep.z_star, [1.0, 0.0], atol=1e-9)
        assert set(rep.active_set) == {0, 1, 2}

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        a = np.vstack([rng.standard_normal((6, 3)), np.eye(3), -np.eye(3)])
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b = rng.uniform(0.5, 1.5, size=12)
        # duplicate two rows to make the slice degenerate
        a = np.vstack([a, a[[0, 3]]])
        b = np.concatenate([b, b[[0, 3]]])
        d = rng.standard_normal(3) * 3.0
        base = solve_qp(np.eye(3), d, a, b)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(a.shape[0])
            rep = solve_qp(np.eye(3), d, a[perm], b[perm])
            assert np.abs(rep.z_star - base.z_star).max() < 1e-8

    def test_infeasible(self):
        rep = solve_qp(np.eye(1), np.zeros(1), [[1.0], [-1.0]], [1.0, -2.0])
        assert rep.status == "infeasible"

    def test_indefinite_rejected(self):
        with pytest.raises(ValueError):
            solve_qp(np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2),
                     [[1.0, 0.0]], [1.0])

    def test_warm_start_used(self):
        rep = solve_qp(np.eye(2), np.zeros(2), [[-1.0, -1.0]], [-1.0],
                       start=np.array([2.0, 2.0]))
        assert_allclose(rep.z_star, [0.5, 0.5], atol=1e-9)
