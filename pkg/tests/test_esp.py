"""Facet-walk engine tests: the worked 3-cube, mode agreement under
duplicated rows, oracle cross-checks on small random instances, and the
assorted guard rails."""

import numpy as np
import pytest

from espproj.baselines import (BenchSpec, fme_project, gen_random_polytope,
                               ve_project)
from espproj.esp import (DegenerateInstance, EspConfig, EspError, _Engine,
                         _enum_irredundant, esp_project)
from espproj.polytope import HPolytope, equality_set_closure, polytope_equal
from espproj.solvers import ToleranceConfig


def cube3() -> HPolytope:
    """Unit 3-cube over (x1, x2, y): per-variable upper then lower rows."""
    c = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0],
                  [0.0, -1.0], [0.0, 0.0], [0.0, 0.0]])
    d = np.array([[0.0], [0.0], [0.0], [0.0], [1.0], [-1.0]])
    b = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    return HPolytope(c, d, b)


SQUARE_ROWS = {
    ((1.0, 0.0), 1.0), ((-1.0, 0.0), 0.0),
    ((0.0, 1.0), 1.0), ((0.0, -1.0), 0.0),
}


def facet_row_set(result, decimals=9):
    return {(tuple(np.round(f.a, decimals)), round(float(f.b), decimals))
            for f in result.facets}


class _ForcedFirstDraw:
    """standard_normal stub that serves one fixed vector, then defers."""

    def __init__(self, first, seed=0):
        self.first = np.asarray(first, dtype=float)
        self.inner = np.random.default_rng(seed)
        self.spent = False

    def standard_normal(self, n):
        if not self.spent and n == self.first.size:
            self.spent = True
            return self.first.copy()
        return self.inner.standard_normal(n)


class TestCubeGolden:
    def test_projection_is_unit_square(self):
        res = esp_project(cube3(), EspConfig(rng_seed=0))
        assert res.status == "complete"
        assert len(res.facets) == 4
        assert facet_row_set(res) == SQUARE_ROWS

    def test_initial_facet_under_axis_draw(self):
        engine = _Engine(cube3(), EspConfig(), ToleranceConfig())
        engine.rng = _ForcedFirstDraw([1.0, 0.0])
        facet, _ = engine._initial_facet()
        assert facet.eset == (0,)
        np.testing.assert_allclose(facet.a, [1.0, 0.0], atol=1e-9)

    def test_ridges_and_adjacent_facets_of_first_facet(self):
        engine = _Engine(cube3(), EspConfig(), ToleranceConfig())
        engine.rng = _ForcedFirstDraw([1.0, 0.0])
        facet, _ = engine._initial_facet()
        ridges = engine._ridge_search(facet)
        assert {r.eset for r in ridges} == {(0, 2), (0, 3)}
        adjacent = set()
        for ridge in ridges:
            adj, _ = engine._adjacent_facet(facet, ridge)
            adjacent.add(adj.eset)
        assert adjacent == {(2,), (3,)}

    def test_every_ridge_seen_twice_and_closed(self):
        res = esp_project(cube3(), EspConfig(rng_seed=1))
        assert len(res.ridges) == 4
        assert all(r.visit_count == 2 for r in res.ridges)
        cube = cube3()
        for f in res.facets:
            assert set(equality_set_closure(cube, f.eset)) == set(f.eset)

    def test_runs_under_a_second(self):
        res = esp_project(cube3())
        assert res.wall_time_s < 1.0


class TestDuplicatedRows:
    """A facet carried by two identical rows forces a non-unique dual."""

    def dup_cube(self):
        base = cube3()
        c = np.vstack([base.C, base.C[0]])
        d = np.vstack([base.D, base.D[0]])
        b = np.append(base.b, base.b[0])
        return HPolytope(c, d, b)

    def test_recursive_and_accelerated_agree(self):
        poly = self.dup_cube()
        rec = esp_project(poly, EspConfig(mode="recursive", rng_seed=2))
        acc = esp_project(poly, EspConfig(mode="accelerated", rng_seed=2))
        assert facet_row_set(rec) == facet_row_set(acc) == SQUARE_ROWS

    def test_plain_mode_never_fakes_an_answer(self):
        poly = self.dup_cube()
        try:
            res = esp_project(poly, EspConfig(mode="plain", rng_seed=2))
        except DegenerateInstance:
            return
        assert facet_row_set(res) == SQUARE_ROWS
        assert res.degeneracy_events == 0

    def test_accelerated_spends_qps_only_on_events(self):
        poly = self.dup_cube()
        res = esp_project(poly, EspConfig(mode="accelerated", rng_seed=2))
        if res.degeneracy_events == 0:
            assert res.qp_count == 0
        else:
            assert res.qp_count >= res.degeneracy_events


class TestModeAgreement:
    @pytest.mark.parametrize("inj", [2, 4, 8])
    def test_modes_match_on_injected_instances(self, inj):
        spec = BenchSpec(dim_total=5, dim_keep=3, n_constraints=18,
                         seed=100 + inj, degeneracy_injections=inj)
        poly = gen_random_polytope(spec)
        rec = esp_project(poly, EspConfig(mode="recursive", rng_seed=1))
        acc = esp_project(poly, EspConfig(mode="accelerated", rng_seed=1))
        assert facet_row_set(rec, 6) == facet_row_set(acc, 6)

    def test_seed_only_changes_the_walk_not_the_answer(self):
        spec = BenchSpec(dim_total=6, dim_keep=3, n_constraints=20, seed=5)
        poly = gen_random_polytope(spec)
        a = esp_project(poly, EspConfig(rng_seed=11))
        b = esp_project(poly, EspConfig(rng_seed=29))
        assert len(a.facets) == len(b.facets)
        assert polytope_equal(a.as_polytope(), b.as_polytope(), 1e-6)

    def test_same_seed_reproduces_byte_identical_rows(self):
        spec = BenchSpec(dim_total=5, dim_keep=2, n_constraints=16, seed=9)
        poly = gen_random_polytope(spec)
        a = esp_project(poly, EspConfig(rng_seed=3))
        b = esp_project(poly, EspConfig(rng_seed=3))
        assert a.G.tobytes() == b.G.tobytes()
        assert a.g.tobytes() == b.g.tobytes()
        assert a.lp_count == b.lp_count


class TestOracleCrossChecks:
    @pytest.mark.parametrize("seed", range(6))
    def test_three_routes_agree(self, seed):
        rng = np.random.default_rng(1000 + seed)
        spec = BenchSpec(dim_total=int(rng.integers(4, 7)),
                         dim_keep=int(rng.integers(2, 4)),
                         n_constraints=int(rng.integers(14, 24)),
                         seed=seed)
        poly = gen_random_polytope(spec)
        shadow = esp_project(poly, EspConfig(rng_seed=seed)).as_polytope()
        assert polytope_equal(shadow, fme_project(poly).polytope, 1e-6)
        assert polytope_equal(shadow, ve_project(poly).polytope, 1e-6)


class TestInterval:
    def test_keep_one_dimension(self):
        # 0 <= x <= 2 and x + y <= 3, 0 <= y <= 2 projects to [0, 2]
        c = np.array([[1.0], [-1.0], [1.0], [0.0], [0.0]])
        d = np.array([[0.0], [0.0], [1.0], [1.0], [-1.0]])
        b = np.array([2.0, 0.0, 3.0, 2.0, 0.0])
        res = esp_project(HPolytope(c, d, b))
        assert facet_row_set(res) == {((1.0,), 2.0), ((-1.0,), 0.0)}
        assert res.ridges == []


class TestGuards:
    def test_config_rejects_bad_values(self):
        with pytest.raises(ValueError):
            EspConfig(mode="fast")
        with pytest.raises(ValueError):
            EspConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            EspConfig(epsilon=2e-3)
        with pytest.raises(ValueError):
            EspConfig(lambda_scale=0.0)
        with pytest.raises(ValueError):
            EspConfig(max_facets=0)

    def test_flat_shadow_is_rejected(self):
        # x1 pinned to 0 by a pair of implicit equalities
        c = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        d = np.array([[0.0], [0.0], [1.0], [-1.0]])
        b = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.raises(EspError, match="full-dimensional"):
            esp_project(HPolytope(c, d, b))

    def test_unbounded_shadow_is_rejected(self):
        # slab bounds y only; the shadow is all of R^2
        c = np.zeros((2, 2))
        d = np.array([[1.0], [-1.0]])
        b = np.array([1.0, 0.0])
        with pytest.raises(EspError):
            esp_project(HPolytope(c, d, b))

    def test_max_facets_abort_is_reported(self):
        spec = BenchSpec(dim_total=6, dim_keep=4, n_constraints=20, seed=2)
        poly = gen_random_polytope(spec)
        full = esp_project(poly)
        assert len(full.facets) > 3
        res = esp_project(poly, EspConfig(max_facets=3))
        assert res.status == "aborted-max-facets"

    def test_zero_kept_dimensions_rejected(self):
        with pytest.raises(ValueError):
            esp_project(HPolytope(np.zeros((2, 0)),
                                  np.array([[1.0], [-1.0]]),
                                  np.array([1.0, 0.0])))


class TestEnumPruner:
    def test_drops_strictly_redundant_row(self):
        rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0],
                         [1.0, 1.0]])
        rhs = np.array([1.0, 1.0, 1.0, 1.0, 5.0])
        assert _enum_irredundant(rows, rhs) == [0, 1, 2, 3]

    def test_keeps_touching_but_supporting_row(self):
        # x + y <= 2 touches the square only at the corner: no facet
        rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0],
                         [1.0, 1.0]])
        rhs = np.array([1.0, 1.0, 1.0, 1.0, 2.0])
        assert _enum_irredundant(rows, rhs) == [0, 1, 2, 3]

    def test_unbounded_wedge_keeps_both_rows(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        rhs = np.array([1.0, 1.0])
        assert _enum_irredundant(rows, rhs) == [0, 1]

    def test_bails_out_above_combination_cap(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((300, 4))
        rhs = np.ones(300)
        assert _enum_irredundant(rows, rhs) is None
