"""H-polytopes split into kept and eliminated coordinate blocks.

A polytope is the set {(x, y) : C x + D y <= b} with x the d kept
coordinates (projection target) and y the k coordinates to eliminate.
Rows are normalized to unit Euclidean norm over [C D] on construction, so
offsets and slacks are comparable across rows.

The text format round-tripped by :func:`load_hrep` / :func:`dump_hrep`:

    # optional comments
    hrep d=<d> k=<k> q=<q>
    <C row> <D row> <b>          (q lines, d+k+1 decimals each)

Writers emit 17 significant digits so files reproduce bit-exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from espproj.linalg import ToleranceConfig, rank
from espproj.solvers import LinearProgram, solve_lp


class PolytopeError(ValueError):
    """Malformed, empty, or unbounded input polytope."""


@dataclass
class HPolytope:
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    names: list[str] | None = None

    def __post_init__(self) -> None:
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if self.D.size == 0:
            self.D = np.zeros((self.C.shape[0], 0))
        self.b = np.asarray(self.b, dtype=float).ravel()
        q = self.C.shape[0]
        if self.D.shape[0] != q or self.b.size != q:
            raise PolytopeError("row count mismatch between C, D, b")
        norms = np.linalg.norm(np.hstack([self.C, self.D]), axis=1)
        if q and norms.min() < 1e-12:
            bad = int(np.argmin(norms))
            raise PolytopeError(f"row {bad} has zero normal")
        if q:
            self.C = self.C / norms[:, None]
            self.D = self.D / norms[:, None]
            self.b = self.b / norms
        if self.names is not None and len(self.names) != q:
            raise PolytopeError("names length mismatch")

    @property
    def d(self) -> int:
        return self.C.shape[1]

    @property
    def k(self) -> int:
        return self.D.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    def stacked(self) -> np.ndarray:
        return np.hstack([self.C, self.D])

    def slack(self, z: np.ndarray) -> np.ndarray:
        """Per-row slack b - [C D] z at a full-space point."""
        return self.b - self.stacked() @ np.asarray(z, dtype=float)

    def translated(self, x_shift: np.ndarray, y_shift: np.ndarray | None = None) -> "HPolytope":
        """Polytope in coordinates z' = z - shift (same rows, moved offsets)."""
        b = self.b - self.C @ np.asarray(x_shift, dtype=float)
        if y_shift is not None:
            b = b - self.D @ np.asarray(y_shift, dtype=float)
        return HPolytope(self.C.copy(), self.D.copy(), b, self.names)


def load_hrep(path_or_file, validate: bool = True,
              tol: ToleranceConfig | None = None) -> HPolytope:
    """Parse the hrep text format; optionally check nonempty and bounded."""
    if hasattr(path_or_file, "read"):
        lines = path_or_file.read().splitlines()
    else:
        with open(path_or_file, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    content = [ln.strip() for ln in lines]
    content = [ln for ln in content if ln and not ln.startswith("#")]
    if not content:
        raise PolytopeError("empty hrep file")
    head = content[0].split()
    if len(head) != 4 or head[0] != "hrep":
        raise PolytopeError(f"bad header line: {content[0]!r}")
    try:
        meta = {kv.split("=")[0]: int(kv.split("=")[1]) for kv in head[1:]}
        d, k, q = meta["d"], meta["k"], meta["q"]
    except (KeyError, IndexError, ValueError) as exc:
        raise PolytopeError(f"bad header line: {content[0]!r}") from exc
    if len(content) - 1 != q:
        raise PolytopeError(f"expected {q} data rows, found {len(content) - 1}")
    rows = []
    for ln in content[1:]:
        vals = ln.split()
        if len(vals) != d + k + 1:
            raise PolytopeError(f"expected {d + k + 1} fields, got {len(vals)}: {ln!r}")
        rows.append([float(v) for v in vals])
    arr = np.asarray(rows, dtype=float).reshape(q, d + k + 1)
    poly = HPolytope(arr[:, :d], arr[:, d:d + k], arr[:, -1])
    if validate:
        check_nonempty_bounded(poly, tol)
    return poly


def dump_hrep(poly: HPolytope, path_or_file) -> None:
    buf = io.StringIO()
    buf.write(f"hrep d={poly.d} k={poly.k} q={poly.q}\n")
    full = np.hstack([poly.C, poly.D, poly.b[:, None]])
    for row in full:
        buf.write(" ".join(format(v, ".17g") for v in row) + "\n")
    text = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8") as fh:
            fh.write(text)


def bounding_box(poly: HPolytope,
                 tol: ToleranceConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise extremes via 2(d+k) LPs; raises if empty or unbounded."""
    n = poly.d + poly.k
    lo = np.zeros(n)
    hi = np.zeros(n)
    stacked = poly.stacked()
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        up = solve_lp(LinearProgram(c, stacked, poly.b), tol)
        if up.status == "infeasible":
            raise PolytopeError("polytope is empty")
        if up.status == "unbounded":
            raise PolytopeError(f"polytope unbounded above in coordinate {j}")
        dn = solve_lp(LinearProgram(-c, stacked, poly.b), tol)
        if dn.status == "unbounded":
            raise PolytopeError(f"polytope unbounded below in coordinate {j}")
        hi[j] = up.objective_value
        lo[j] = -dn.objective_value
    return lo, hi


def check_nonempty_bounded(poly: HPolytope, tol: ToleranceConfig | None = None) -> None:
    bounding_box(poly, tol)


def contains(poly: HPolytope, z: np.ndarray, tol: ToleranceConfig | None = None) -> bool:
    tol = tol or ToleranceConfig()
    return bool(poly.slack(z).min(initial=np.inf) >= -tol.feas_tol)


def lift_point(poly: HPolytope, x: np.ndarray,
               tol: ToleranceConfig | None = None) -> np.ndarray | None:
    """Find y with (x, y) in the polytope, or None if x is not in the shadow."""
    x = np.asarray(x, dtype=float)
    if poly.k == 0:
        return np.zeros(0) if contains(poly, x, tol) else None
    rep = solve_lp(LinearProgram(np.zeros(poly.k), poly.D, poly.b - poly.C @ x), tol)
    return rep.z_star if rep.status == "optimal" else None


def max_slack_on_face(poly: HPolytope, row: int,
                      eq_a: np.ndarray, eq_b: np.ndarray,
                      tol: ToleranceConfig | None = None) -> float:
    """Largest slack of ``row`` over the polytope cut by extra equalities."""
    stacked = poly.stacked()
    rep = solve_lp(
        LinearProgram(-stacked[row], stacked, poly.b, a_eq=eq_a, b_eq=eq_b), tol
    )
    if rep.status != "optimal":
        raise PolytopeError(f"face slack LP returned {rep.status}")
    return float(poly.b[row] + rep.objective_value)


def rows_active_everywhere(poly: HPolytope, candidates, eq_a: np.ndarray,
                           eq_b: np.ndarray,
                           tol: ToleranceConfig | None = None) -> list[int]:
    """Candidates whose slack stays at zero across the whole sliced polytope.

    Batched: maximize the summed slack of the remaining candidates in one LP.
    Slacks are nonnegative on the slice, so a zero optimum pins every row at
    equality simultaneously, while a positive optimum exposes witnesses (rows
    slack at the maximizer) that are removed before the next round.  Rows the
    sum cannot settle (total positive but no row individually over tolerance)
    fall back to single-row probes.
    """
    tol = tol or ToleranceConfig()
    remaining = [int(i) for i in candidates]
    stacked = poly.stacked()
    out: list[int] = []
    while remaining:
        c = -stacked[remaining].sum(axis=0)
        rep = solve_lp(LinearProgram(c, stacked, poly.b, a_eq=eq_a, b_eq=eq_b), tol)
        if rep.status != "optimal":
            raise PolytopeError(f"face slack LP returned {rep.status}")
        sl = poly.b[remaining] - stacked[remaining] @ rep.z_star
        total = float(poly.b[remaining].sum() + rep.objective_value)
        witnessed = sl > tol.eq_tol
        if witnessed.any():
            remaining = [i for i, w in zip(remaining, witnessed) if not w]
            continue
        if total <= tol.eq_tol:
            out.extend(remaining)
            break
        j = remaining.pop(int(np.argmax(sl)))
        if max_slack_on_face(poly, j, eq_a, eq_b, tol) <= tol.eq_tol:
            out.append(j)
    return sorted(out)


def equality_set_closure(poly: HPolytope, eset,
                         tol: ToleranceConfig | None = None) -> tuple[int, ...]:
    """Smallest equality set defining the same face (one slack LP per candidate)."""
    tol = tol or ToleranceConfig()
    eset = sorted(int(i) for i in eset)
    stacked = poly.stacked()
    eq_a = stacked[eset] if eset else np.zeros((0, poly.d + poly.k))
    eq_b = poly.b[eset] if eset else np.zeros(0)
    others = [i for i in range(poly.q) if i not in set(eset)]
    extra = rows_active_everywhere(poly, others, eq_a, eq_b, tol)
    return tuple(sorted(set(eset) | set(extra)))


def face_dim(poly: HPolytope, eset, tol: ToleranceConfig | None = None) -> int:
    """dim P_E = (d + k) - rank [C_E D_E]."""
    tol = tol or ToleranceConfig()
    eset = sorted(int(i) for i in eset)
    if not eset:
        return poly.d + poly.k
    return poly.d + poly.k - rank(poly.stacked()[eset], tol.rank_tol)


def implicit_equalities(poly: HPolytope, tol: ToleranceConfig | None = None) -> list[int]:
    """Rows whose slack is zero on the entire polytope (equality encodings)."""
    tol = tol or ToleranceConfig()
    empty_a = np.zeros((0, poly.d + poly.k))
    empty_b = np.zeros(0)
    return rows_active_everywhere(poly, range(poly.q), empty_a, empty_b, tol)


def interior_point(poly: HPolytope, implicit: list[int] | None = None,
                   tol: ToleranceConfig | None = None) -> tuple[np.ndarray, float]:
    """Point with uniform positive slack on all non-implicit rows.

    Returns (z, tau).  tau > 0 certifies the polytope has a relative
    interior point off every non-implicit row; rows listed in ``implicit``
    are held at equality instead of pushed.
    """
    tol = tol or ToleranceConfig()
    implicit = list(implicit) if implicit is not None else []
    n = poly.d + poly.k
    stacked = poly.stacked()
    push = np.ones(poly.q)
    push[implicit] = 0.0
    # variables (z, tau): maximize tau with tau capped at 1 for boundedness
    a = np.hstack([stacked, push[:, None]])
    a = np.vstack([a, np.append(np.zeros(n), 1.0)])
    b = np.append(poly.b, 1.0)
    rep = solve_lp(LinearProgram(np.append(np.zeros(n), 1.0), a, b), tol)
    if rep.status != "optimal":
        raise PolytopeError(f"interior-point LP returned {rep.status}")
    return rep.z_star[:n], float(rep.objective_value)


def polytope_equal(p1: HPolytope, p2: HPolytope,
                   tol_abs: float = 1e-6) -> bool:
    """Mutual inclusion of two bounded polytopes over identical coordinates.

    Each row of one must be satisfied by the whole other (support LP per
    row).  Inclusion both ways means equality as sets.
    """
    if p1.d + p1.k != p2.d + p2.k:
        return False

    def includes(outer: HPolytope, inner: HPolytope) -> bool:
        stacked_in = inner.stacked()
        rows_out = outer.stacked()
        for i in range(outer.q):
            rep = solve_lp(LinearProgram(rows_out[i], stacked_in, inner.b))
            if rep.status != "optimal":
                return False
            if rep.objective_value > outer.b[i] + tol_abs:
                return False
        return True

    return includes(p1, p2) and includes(p2, p1)


def reduce_rows(poly: HPolytope,
                tol: ToleranceConfig | None = None) -> tuple[HPolytope, list[int]]:
    """Drop redundant rows (deletion leaves the feasible set unchanged).

    Sequential single-row tests: a row is redundant iff its maximum value
    over the remaining rows' polytope cannot exceed its own offset.
    Returns the reduced polytope and the removed original row indices.
    """
    tol = tol or ToleranceConfig()
    stacked = poly.stacked()
    keep = np.ones(poly.q, dtype=bool)
    for i in range(poly.q):
        keep[i] = False
        rows = np.vstack([stacked[keep], stacked[i]])
        rhs = np.append(poly.b[keep], poly.b[i] + 1.0)  # cap keeps the LP bounded
        rep = solve_lp(LinearProgram(stacked[i], rows, rhs), tol)
        if rep.status != "optimal" or rep.objective_value > poly.b[i] + tol.feas_tol:
            keep[i] = True  # needed
    removed = [int(i) for i in np.nonzero(~keep)[0]]
    names = [poly.names[i] for i in np.nonzero(keep)[0]] if poly.names else None
    return HPolytope(poly.C[keep], poly.D[keep], poly.b[keep], names), removed
