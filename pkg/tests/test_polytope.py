import io
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from espproj.linalg import ToleranceConfig
from espproj.polytope import (
    HPolytope,
    PolytopeError,
    bounding_box,
    contains,
    dump_hrep,
    equality_set_closure,
    face_dim,
    implicit_equalities,
    interior_point,
    lift_point,
    load_hrep,
    polytope_equal,
    reduce_rows,
)


def cube3() -> HPolytope:
    """Unit cube in (x1, x2, y): rows x1<=1, -x1<=0, x2<=1, -x2<=0, y<=1, -y<=0."""
    c = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [0, 0], [0, 0]], float)
    d = np.array([[0], [0], [0], [0], [1], [-1]], float)
    b = np.array([1, 0, 1, 0, 1, 0], float)
    return HPolytope(c, d, b)


class TestConstruction:
    def test_normalization(self):
        p = HPolytope([[2.0, 0.0]], [[0.0]], [4.0])
        assert_allclose(p.C, [[1.0, 0.0]])
        assert_allclose(p.b, [2.0])

    def test_zero_row_rejected(self):
        with pytest.raises(PolytopeError):
            HPolytope([[0.0, 0.0]], [[0.0]], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(PolytopeError):
            HPolytope([[1.0, 0.0]], [[0.0], [0.0]], [1.0])

    def test_dims(self):
        p = cube3()
        assert (p.d, p.k, p.q) == (2, 1, 6)


class TestFileFormat:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal((5, 3))
        d = rng.standard_normal((5, 2))
        b = rng.uniform(1.0, 2.0, 5)
        p = HPolytope(np.vstack([c, np.eye(3) @ np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1.0]])]),
                      np.vstack([d, np.zeros((3, 2))]),
                      np.append(b, [5.0, 5.0, 5.0]))
        # make it bounded enough to validate
        box_c = np.vstack([np.eye(5), -np.eye(5)])[:, :3]
        box_d = np.vstack([np.eye(5), -np.eye(5)])[:, 3:]
        p = HPolytope(np.vstack([p.C, box_c]), np.vstack([p.D, box_d]),
                      np.append(p.b, np.full(10, 6.0)))
        buf = io.StringIO()
        dump_hrep(p, buf)
        text1 = buf.getvalue()
        p2 = load_hrep(io.StringIO(text1))
        buf2 = io.StringIO()
        dump_hrep(p2, buf2)
        assert buf2.getvalue() == text1

    def test_header_and_comments(self):
        text = "# a comment\nhrep d=1 k=0 q=2\n1 1\n# middle\n-1 0\n"
        p = load_hrep(io.StringIO(text))
        assert p.q == 2 and p.d == 1 and p.k == 0

    def test_bad_header(self):
        with pytest.raises(PolytopeError):
            load_hrep(io.StringIO("hpoly d=1 k=0 q=1\n1 1\n"))

    def test_wrong_field_count(self):
        with pytest.raises(PolytopeError):
            load_hrep(io.StringIO("hrep d=2 k=0 q=1\n1 0\n"))

    def test_row_count_mismatch(self):
        with pytest.raises(PolytopeError):
            load_hrep(io.StringIO("hrep d=1 k=0 q=2\n1 1\n"))

    def test_unbounded_rejected_on_load(self):
        with pytest.raises(PolytopeError):
            load_hrep(io.StringIO("hrep d=2 k=0 q=2\n1 0 1\n0 1 1\n"))

    def test_empty_rejected_on_load(self):
        text = "hrep d=1 k=0 q=2\n1 -2\n-1 1\n"  # z <= -2, z >= -1
        with pytest.raises(PolytopeError):
            load_hrep(io.StringIO(text))


class TestQueries:
    def test_bounding_box(self):
        lo, hi = bounding_box(cube3())
        assert_allclose(lo, [0, 0, 0], atol=1e-9)
        assert_allclose(hi, [1, 1, 1], atol=1e-9)

    def test_contains(self):
        p = cube3()
        assert contains(p, [0.5, 0.5, 0.5])
        assert contains(p, [1.0, 0.0, 1.0])
        assert not contains(p, [1.1, 0.0, 0.0])

    def test_lift(self):
        p = cube3()
        y = lift_point(p, [0.25, 0.75])
        assert y is not None and 0.0 - 1e-9 <= y[0] <= 1.0 + 1e-9
        assert lift_point(p, [2.0, 0.0]) is None

    def test_face_dim(self):
        p = cube3()
        assert face_dim(p, []) == 3
        assert face_dim(p, [0]) == 2          # facet x1 = 1
        assert face_dim(p, [0, 2]) == 1       # edge
        assert face_dim(p, [0, 2, 4]) == 0    # vertex

    def test_closure_adds_duplicates(self):
        p = cube3()
        dup = HPolytope(
            np.vstack([p.C, p.C[[0]]]), np.vstack([p.D, p.D[[0]]]),
            np.append(p.b, p.b[0]),
        )
        assert equality_set_closure(dup, [0]) == (0, 6)

    def test_closure_is_idempotent_on_plain_facet(self):
        assert equality_set_closure(cube3(), [0]) == (0,)

    def test_closure_of_edge(self):
        # rows 0 and 2 pin the edge x1=1, x2=1; nothing else is forced
        assert equality_set_closure(cube3(), [0, 2]) == (0, 2)

    def test_implicit_equalities(self):
        # encode x2 = 0.5 as a +/- pair inside a box
        c = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [0, 1], [0, -1]], float)
        d = np.zeros((6, 0))
        b = np.array([1, 0, 0.5, -0.5, 1, 0], float)
        p = HPolytope(c, d, b)
        assert implicit_equalities(p) == [2, 3]

    def test_interior_point(self):
        z, tau = interior_point(cube3())
        assert tau > 0.3
        assert contains(cube3(), z)
        assert cube3().slack(z).min() > 0.3


class TestEqualReduce:
    def test_polytope_equal_true(self):
        sq1 = HPolytope(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float),
                        np.zeros((4, 0)), np.array([1, 0, 1, 0], float))
        # same square with a redundant extra row and different row order
        sq2 = HPolytope(np.array([[0, -1], [1, 0], [0, 1], [-1, 0], [1, 1]], float),
                        np.zeros((5, 0)), np.array([0, 1, 1, 0, 5.0], float))
        assert polytope_equal(sq1, sq2)

    def test_polytope_equal_false(self):
        sq = HPolytope(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float),
                       np.zeros((4, 0)), np.array([1, 0, 1, 0], float))
        bigger = HPolytope(sq.C, sq.D, sq.b + np.array([0.1, 0, 0, 0]))
        assert not polytope_equal(sq, bigger)

    def test_reduce_drops_redundant(self):
        c = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 0]], float)
        b = np.array([1, 0, 1, 0, 3.0], float)
        p = HPolytope(c, np.zeros((5, 0)), b)
        red, removed = reduce_rows(p)
        assert removed == [4]
        assert red.q == 4

    def test_reduce_keeps_duplicates_only_once(self):
        c = np.array([[1, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], float)
        b = np.array([1, 1, 0, 1, 0], float)
        p = HPolytope(c, np.zeros((5, 0)), b)
        red, removed = reduce_rows(p)
        assert len(removed) == 1
        assert red.q == 4
