"""Reference projections and benchmark instances.

Two independent oracles compute the same shadow as the facet-walk engine
by entirely different routes, so agreement between all three is strong
evidence of correctness:

* ``fme_project``  eliminates the internal variables one at a time,
  pruning redundant rows with LPs after every pass (otherwise the row
  count explodes doubly exponentially);
* ``ve_project``   collects vertices of the shadow with support LPs and
  grows a convex hull until no hull facet can be pushed outward.

Both refuse instances outside their practical envelope by raising
OracleUnavailable rather than hanging.  ``gen_random_polytope`` builds the
seeded random instances used by the benchmark harness: a bounding box plus
general-position rows, with optional duplicated rows appended at the end
to force degenerate vertices.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from espproj.linalg import ToleranceConfig
from espproj.polytope import HPolytope
from espproj.solvers import LinearProgram, solve_lp

_FME_MAX_INTERNAL = 10
_FME_MAX_ROWS = 60
_VE_MAX_DIM = 7
_COEF_EPS = 1e-10


class OracleUnavailable(RuntimeError):
    """The instance is outside the envelope this baseline can handle."""


@dataclass
class BaselineResult:
    polytope: HPolytope
    lp_count: int
    wall_time_s: float
    vertex_count: int = 0


# ---------------------------------------------------------------------------
# Fourier-Motzkin elimination
# ---------------------------------------------------------------------------

def _normalize_rows(rows: np.ndarray, rhs: np.ndarray):
    """Unit-normalize rows, dropping tautologies.  Returns the keep mask."""
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > _COEF_EPS * np.maximum(1.0, np.abs(rhs))
    dropped_bad = (~keep) & (rhs < -1e-7)
    if dropped_bad.any():
        raise ValueError("inconsistent system: 0 <= negative constant")
    rows, rhs, norms = rows[keep], rhs[keep], norms[keep]
    return rows / norms[:, None], rhs / norms, keep


def _dedupe_rows(rows: np.ndarray, rhs: np.ndarray, anc: list | None = None):
    """Collapse parallel duplicates, keeping the tightest offset (and its
    originating-row set when ancestry is tracked)."""
    seen: dict[bytes, int] = {}
    keep_rows, keep_rhs, keep_anc = [], [], []
    for i in range(len(rows)):
        key = np.round(rows[i], 9).tobytes()
        j = seen.get(key)
        if j is None:
            seen[key] = len(keep_rows)
            keep_rows.append(rows[i])
            keep_rhs.append(rhs[i])
            if anc is not None:
                keep_anc.append(anc[i])
        elif rhs[i] < keep_rhs[j]:
            keep_rhs[j] = rhs[i]
            if anc is not None:
                keep_anc[j] = anc[i]
    return np.array(keep_rows), np.array(keep_rhs), keep_anc


def _prune_redundant(rows: np.ndarray, rhs: np.ndarray, tol: ToleranceConfig):
    """Drop rows implied by the others.  Row i is redundant iff maximizing
    a_i z subject to the rest (and a cap a_i z <= b_i + 1, which keeps the
    LP bounded) cannot push past b_i.  Also returns the surviving indices."""
    lp_used = 0
    idx = list(range(len(rows)))
    i = 0
    while i < len(rows):
        others = np.delete(rows, i, axis=0)
        rhs_others = np.delete(rhs, i)
        a_ub = np.vstack([others, rows[i][None, :]])
        b_ub = np.append(rhs_others, rhs[i] + 1.0)
        rep = solve_lp(LinearProgram(rows[i], a_ub, b_ub), tol)
        lp_used += 1
        if rep.status == "optimal" and rep.objective_value <= rhs[i] + 1e-7:
            rows = others
            rhs = rhs_others
            del idx[i]
        else:
            i += 1
    return rows, rhs, lp_used, idx


def _drop_superset_ancestry(anc: list):
    """Chernikov subsumption: a derived row whose originating set strictly
    contains another row's is redundant.  Returns indices to keep."""
    order = sorted(range(len(anc)), key=lambda i: len(anc[i]))
    kept: list[int] = []
    for i in order:
        if not any(anc[j] < anc[i] for j in kept):
            kept.append(i)
    return sorted(kept)


def eliminate_columns(rows: np.ndarray, rhs: np.ndarray, cols,
                      tol: ToleranceConfig | None = None,
                      prune: bool = True,
                      max_rows: int | None = None):
    """Eliminate the given columns from ``rows z <= rhs``.

    Returns (kept_rows, kept_rhs, lp_used) where kept_rows is restricted to
    the surviving columns in their original order.  Columns are eliminated
    cheapest first (fewest positive*negative pairings).  Growth is held
    down without LPs by ancestry accounting: a row derived from more than
    pass_count+1 original rows is redundant, as is one whose originating
    set strictly contains another row's.  With ``prune`` the survivors are
    additionally LP-reduced after every pass, which gives a near-minimal
    description but costs one LP per row per pass.  Raises RuntimeError if
    the intermediate row count passes ``max_rows``.
    """
    tol = tol or ToleranceConfig()
    rows = np.array(rows, dtype=float)
    rhs = np.array(rhs, dtype=float)
    remaining = sorted(set(int(c) for c in cols))
    lp_used = 0
    rows, rhs, keep = _normalize_rows(rows, rhs)
    anc = [frozenset([i]) for i in np.nonzero(keep)[0]]
    elim_count = 0
    while remaining:
        costs = []
        for c in remaining:
            pos = int((rows[:, c] > _COEF_EPS).sum())
            neg = int((rows[:, c] < -_COEF_EPS).sum())
            costs.append((pos * neg, c))
        _, col = min(costs)
        remaining.remove(col)
        elim_count += 1
        bound = elim_count + 1

        coef = rows[:, col]
        pos_idx = np.nonzero(coef > _COEF_EPS)[0]
        neg_idx = np.nonzero(coef < -_COEF_EPS)[0]
        zero_idx = np.nonzero(np.abs(coef) <= _COEF_EPS)[0]
        new_rows = [rows[zero_idx]]
        new_rhs = [rhs[zero_idx]]
        new_anc = [anc[i] for i in zero_idx]
        built = len(zero_idx)
        # the budget must bind inside the pairing loop: a single pass can
        # otherwise build millions of rows before any check fires
        cap = 4 * max_rows if max_rows is not None else None
        for p in pos_idx:
            for m in neg_idx:
                joined = anc[p] | anc[m]
                if len(joined) > bound:
                    continue
                w_p, w_m = 1.0 / coef[p], -1.0 / coef[m]
                new_rows.append((w_p * rows[p] + w_m * rows[m])[None, :])
                new_rhs.append(np.array([w_p * rhs[p] + w_m * rhs[m]]))
                new_anc.append(joined)
                built += 1
                if cap is not None and built > cap:
                    raise RuntimeError(
                        f"elimination exceeded {max_rows} intermediate rows")
        rows = np.vstack(new_rows) if new_rows else np.zeros((0, rows.shape[1]))
        rhs = np.concatenate(new_rhs) if new_rhs else np.zeros(0)
        anc = new_anc
        rows[:, col] = 0.0
        if len(rows):
            rows, rhs, keep = _normalize_rows(rows, rhs)
            anc = [a for a, k in zip(anc, keep) if k]
            rows, rhs, anc = _dedupe_rows(rows, rhs, anc)
            kept = _drop_superset_ancestry(anc)
            if len(kept) < len(rows):
                rows, rhs = rows[kept], rhs[kept]
                anc = [anc[i] for i in kept]
        if max_rows is not None and len(rows) > max_rows:
            raise RuntimeError(
                f"elimination exceeded {max_rows} intermediate rows")
        if prune and len(rows) > 1:
            rows, rhs, used, kept = _prune_redundant(rows, rhs, tol)
            anc = [anc[i] for i in kept]
            lp_used += used
    keep_cols = [c for c in range(rows.shape[1]) if c not in set(cols)]
    return rows[:, keep_cols], rhs, lp_used


def fme_project(poly: HPolytope, tol: ToleranceConfig | None = None) -> BaselineResult:
    """Shadow of ``poly`` on its kept block by variable elimination."""
    tol = tol or ToleranceConfig()
    if poly.k > _FME_MAX_INTERNAL:
        raise OracleUnavailable(
            f"elimination oracle handles at most {_FME_MAX_INTERNAL} internal "
            f"variables, got {poly.k}")
    if poly.q > _FME_MAX_ROWS:
        raise OracleUnavailable(
            f"elimination oracle handles at most {_FME_MAX_ROWS} rows, got {poly.q}")
    t0 = time.perf_counter()
    cols = list(range(poly.d, poly.d + poly.k))
    try:
        rows, rhs, lp_used = eliminate_columns(
            poly.stacked(), poly.b.copy(), cols, tol=tol, prune=True,
            max_rows=4000)
    except RuntimeError as exc:
        raise OracleUnavailable(str(exc)) from exc
    if len(rows) == 0:
        raise OracleUnavailable("elimination left no rows; shadow unbounded?")
    rows, rhs, used, _ = _prune_redundant(rows, rhs, tol)
    lp_used += used
    out = HPolytope(rows, np.zeros((len(rows), 0)), rhs)
    return BaselineResult(out, lp_used, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Vertex enumeration via support LPs and an expanding hull
# ---------------------------------------------------------------------------

def ve_project(poly: HPolytope, tol: ToleranceConfig | None = None,
               seed: int = 0) -> BaselineResult:
    """Shadow of ``poly`` by hull growth over support-LP vertices."""
    tol = tol or ToleranceConfig()
    d = poly.d
    if d > _VE_MAX_DIM:
        raise OracleUnavailable(
            f"hull oracle handles at most {_VE_MAX_DIM} kept dimensions, got {d}")
    t0 = time.perf_counter()
    stacked = poly.stacked()
    lp_used = 0

    def support(direction: np.ndarray):
        nonlocal lp_used
        lp_used += 1
        c = np.concatenate([direction, np.zeros(poly.k)])
        rep = solve_lp(LinearProgram(c, stacked, poly.b), tol)
        if rep.status != "optimal":
            raise OracleUnavailable(f"support LP returned {rep.status}")
        return rep.z_star[:d], float(rep.objective_value)

    if d == 1:
        hi_x, hi = support(np.array([1.0]))
        lo_x, lo = support(np.array([-1.0]))
        out = HPolytope(np.array([[1.0], [-1.0]]), np.zeros((2, 0)),
                        np.array([hi, lo]))
        return BaselineResult(out, lp_used, time.perf_counter() - t0, 2)

    points: dict[bytes, np.ndarray] = {}

    def add_point(x: np.ndarray) -> bool:
        key = np.round(x, 9).tobytes()
        if key in points:
            return False
        points[key] = x
        return True

    def build_hull(arr: np.ndarray) -> ConvexHull:
        # box-heavy shadows make qhull's facet merging fall over in higher
        # dimensions; joggled input trades ~1e-11 of plane accuracy for a
        # hull that always exists, well under the tolerances used here
        try:
            return ConvexHull(arr)
        except QhullError:
            return ConvexHull(arr, qhull_options="QJ")

    for i in range(d):
        for sgn in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = sgn
            add_point(support(e)[0])

    rng = np.random.default_rng(seed)
    attempts = 0
    while True:
        arr = np.array(list(points.values()))
        if len(arr) >= d + 1:
            try:
                ConvexHull(arr)
                break
            except QhullError:
                pass
        attempts += 1
        if attempts > 50 * d:
            raise OracleUnavailable("shadow looks degenerate to the hull oracle")
        direction = rng.standard_normal(d)
        add_point(support(direction / np.linalg.norm(direction))[0])

    verified: set[bytes] = set()
    for _ in range(500):
        arr = np.array(list(points.values()))
        try:
            hull = build_hull(arr)
        except QhullError as exc:
            raise OracleUnavailable(f"hull rebuild failed: {exc}") from exc
        planes = {}
        for eq in hull.equations:
            normal, rhs = eq[:-1], -eq[-1]
            key = np.round(np.append(normal, rhs), 7).tobytes()
            planes.setdefault(key, (normal, rhs))
        grew = False
        for key, (normal, rhs) in planes.items():
            if key in verified:
                continue
            x, val = support(normal)
            if val > rhs + 1e-7 * max(1.0, abs(rhs)):
                grew = add_point(x) or grew
            else:
                verified.add(key)
        if not grew:
            rows = np.array([p[0] for p in planes.values()])
            offs = np.array([p[1] for p in planes.values()])
            out = HPolytope(rows, np.zeros((len(rows), 0)), offs)
            return BaselineResult(out, lp_used, time.perf_counter() - t0,
                                  len(hull.vertices))
    raise OracleUnavailable("hull growth failed to settle after 500 passes")


# ---------------------------------------------------------------------------
# Random benchmark instances
# ---------------------------------------------------------------------------

@dataclass
class BenchSpec:
    dim_total: int                   # total number of coordinates
    dim_keep: int                    # size of the kept block
    n_constraints: int               # rows before any duplication
    seed: int = 0
    box_fraction: float = 0.7        # share of axis-aligned rows
    degeneracy_injections: int = 0   # exact duplicate rows appended at the end

    def __post_init__(self) -> None:
        if not (1 <= self.dim_keep <= self.dim_total):
            raise ValueError("need 1 <= dim_keep <= dim_total")
        if self.n_constraints < 2 * self.dim_total:
            raise ValueError("need at least 2*dim_total rows to stay bounded")
        if not (0.0 <= self.box_fraction <= 1.0):
            raise ValueError("box_fraction must be in [0, 1]")
        if self.degeneracy_injections < 0:
            raise ValueError("degeneracy_injections must be >= 0")


def gen_random_polytope(spec: BenchSpec) -> HPolytope:
    """Seeded random bounded polytope with the origin strictly inside.

    Layout: one +/- box row per axis (offsets U[0.5, 2]), then extra
    axis-aligned rows up to round(box_fraction * n_constraints), then unit
    gaussian normals, and finally ``degeneracy_injections`` exact copies of
    earlier rows.  Identical spec always yields the identical matrix.
    """
    rng = np.random.default_rng(spec.seed)
    n, q = spec.dim_total, spec.n_constraints
    mat = np.zeros((q, n))
    b = np.zeros(q)
    for i in range(n):
        mat[2 * i, i] = 1.0
        mat[2 * i + 1, i] = -1.0
    b[:2 * n] = rng.uniform(0.5, 2.0, size=2 * n)
    row = 2 * n
    n_box = int(round(spec.box_fraction * q))
    while row < min(n_box, q):
        axis = int(rng.integers(n))
        sign = 1.0 if rng.integers(2) else -1.0
        mat[row, axis] = sign
        b[row] = rng.uniform(0.5, 2.0)
        row += 1
    if row < q:
        g = rng.standard_normal((q - row, n))
        g /= np.linalg.norm(g, axis=1)[:, None]
        mat[row:] = g
        b[row:] = rng.uniform(0.5, 2.0, size=q - row)
    if spec.degeneracy_injections:
        idx = rng.integers(0, q, size=spec.degeneracy_injections)
        mat = np.vstack([mat, mat[idx]])
        b = np.concatenate([b, b[idx]])
    return HPolytope(mat[:, :spec.dim_keep], mat[:, spec.dim_keep:], b)
