"""Facet enumeration of polytope projections by equality-set traversal.

Given P = {(x, y) : C x + D y <= b} bounded with a full-dimensional shadow
pi(P) = {x : exists y, (x, y) in P}, the engine walks the facet graph of
the shadow:

1.  shoot a ray from a strict interior point of the shadow to find one
    facet (one LP per ray, redrawn if the ray hits a lower face);
2.  for each facet, find its ridges ((d-2)-faces) from the facet's reduced
    inequality system, verifying each candidate with a support LP on the
    lifted polytope;
3.  step across each ridge with a slab LP to find the neighbouring facet.

Every face is identified by its equality set: the indices of the rows of P
that are tight on the whole preimage of the face.  Equality sets are
computed by slack-maximization LPs over the sliced polytope, which makes
them independent of which optimizer vertex a solver happens to return.
Each ridge joins exactly two facets, so the work list retires a ridge
after its second sighting; the visit log doubles as a health check.

Degenerate vertices (more tight rows than coordinates, e.g. duplicated
rows) make the one-point active set ambiguous.  Three modes:

* ``plain``        refuse (raise DegenerateInstance);
* ``recursive``    test each tight row with one slack LP over the fiber;
* ``accelerated``  solve one strictly convex QP over the fiber; its
                   unique minimizer pins the active set in a single solve.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from espproj.linalg import (
    ToleranceConfig,
    affine_projection_rows,
    in_row_space,
    orth_null_basis,
    rank,
    row_space_basis,
)
from espproj.polytope import HPolytope, interior_point
from espproj.solvers import LinearProgram, solve_lp, solve_qp

_MAX_GAMMA_DRAWS = 50
_MAX_EPS_HALVINGS = 10
_KEY_DECIMALS = 9
_FIBER_RCOND = 1e-6


class EspError(RuntimeError):
    """Projection failed in a way that retries could not fix."""


class DegenerateInstance(EspError):
    """Plain mode met a degenerate vertex and refuses to guess."""


@dataclass
class EspConfig:
    mode: str = "accelerated"        # plain | recursive | accelerated
    epsilon: float = 1e-6            # ridge slab relaxation, in (0, 1e-3]
    lambda_scale: float = 1.0        # QP curvature scale
    rng_seed: int = 0
    max_facets: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("plain", "recursive", "accelerated"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 < self.epsilon <= 1e-3):
            raise ValueError("epsilon must be in (0, 1e-3]")
        if self.lambda_scale <= 0.0:
            raise ValueError("lambda_scale must be positive")
        if self.max_facets is not None and self.max_facets < 1:
            raise ValueError("max_facets must be at least 1")


@dataclass
class Facet:
    eset: tuple[int, ...]
    a: np.ndarray           # unit outward normal in shadow coordinates
    b: float                # offset: facet lies on {a'x = b}, shadow on <=


@dataclass
class RidgeRecord:
    eset: tuple[int, ...]
    a_r: np.ndarray         # unit direction inside the parent facet's plane
    b_r: float
    parent_facet: tuple[int, ...]
    seen_by: set = field(default_factory=set)   # facets that sighted the ridge

    @property
    def visit_count(self) -> int:
        return len(self.seen_by)


@dataclass
class ProjectionResult:
    facets: list[Facet]
    ridges: list[RidgeRecord]
    lp_count: int = 0
    qp_count: int = 0
    degeneracy_events: int = 0
    gamma_draws: int = 0
    anomalies: int = 0
    status: str = "complete"
    wall_time_s: float = 0.0
    tag: str | None = None   # caller's label, e.g. the owning feeder id

    @property
    def G(self) -> np.ndarray:
        if not self.facets:
            return np.zeros((0, 0))
        return np.vstack([f.a for f in self.facets])

    @property
    def g(self) -> np.ndarray:
        return np.array([f.b for f in self.facets])

    def as_polytope(self) -> HPolytope:
        return HPolytope(self.G, np.zeros((len(self.facets), 0)), self.g)


def _round_key(arr: np.ndarray) -> bytes:
    rounded = np.round(np.asarray(arr, dtype=float), _KEY_DECIMALS)
    rounded += 0.0  # fold -0.0 into 0.0
    return rounded.tobytes()


_ENUM_MAX_COMBOS = 150_000


def _enum_irredundant(rows: np.ndarray, rhs: np.ndarray) -> list[int] | None:
    """Indices of rows carrying a facet of {u : rows u <= rhs}, by
    brute-force vertex enumeration batched over all dim-subsets.

    Beats LP pruning soundly at the dimensions the reduced patch systems
    live in (2 to 4): tens of thousands of stacked dim-by-dim solves cost
    milliseconds.  Returns None when the subset count is too large for
    that to hold, so the caller can fall back to LPs.  A row is kept iff
    the feasible vertices on its plane affinely span the plane.
    """
    m, dim = rows.shape
    if m <= dim:
        return list(range(m))
    # synthetic box so unbounded faces still collect enough vertices
    big = 1e6
    all_rows = np.vstack([rows, np.eye(dim), -np.eye(dim)])
    all_rhs = np.concatenate([rhs, np.full(2 * dim, big)])
    n = len(all_rows)
    if math.comb(n, dim) > _ENUM_MAX_COMBOS:
        return None
    idx = np.fromiter(itertools.combinations(range(n), dim),
                      dtype=np.dtype((np.intp, dim)))
    mats = all_rows[idx]
    dets = np.abs(np.linalg.det(mats))
    ok = dets > 1e-12 * np.maximum(1.0, np.abs(mats).max(axis=(1, 2)) ** dim)
    if not ok.any():
        return []
    pts = np.linalg.solve(mats[ok], all_rhs[idx[ok]][..., None])[..., 0]
    scale = np.maximum(1.0, np.abs(pts).max(axis=1))
    feas = (pts @ all_rows.T - all_rhs).max(axis=1) <= 1e-9 * scale
    pts = pts[feas]
    if pts.shape[0] == 0:
        return []
    resid = np.abs(pts @ rows.T - rhs)
    on_tol = 1e-9 * np.maximum(1.0, np.abs(pts).max(axis=1))
    keep = []
    for i in range(m):
        sel = pts[resid[:, i] <= on_tol]
        if sel.shape[0] < dim:
            continue
        centred = sel - sel.mean(axis=0)
        if np.linalg.matrix_rank(centred, tol=1e-9) >= dim - 1:
            keep.append(i)
    return keep


class _Engine:
    def __init__(self, poly: HPolytope, cfg: EspConfig, tol: ToleranceConfig):
        self.cfg = cfg
        self.tol = tol
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.lp_count = 0
        self.qp_count = 0
        self.degeneracy_events = 0
        self.gamma_draws = 0
        self.anomalies = 0

        self.P = poly
        self.stacked = poly.stacked()
        self.implicit = self._tight_rows_on_region(range(poly.q), None, None)
        if self.implicit:
            w, _ = affine_projection_rows(
                poly.C[self.implicit], poly.D[self.implicit],
                poly.b[self.implicit], tol.rank_tol)
            if w.shape[0] and rank(w, tol.rank_tol) > 0:
                raise EspError(
                    "shadow is not full-dimensional: implicit equality rows "
                    f"{self.implicit} restrict x to an affine subspace")

        z_c, tau = interior_point(poly, self.implicit, tol)
        self.lp_count += 1
        if tau <= tol.feas_tol:
            raise EspError("no strict interior point; polytope is flat or empty")
        self.x_shift = z_c[:poly.d]
        self.P = poly.translated(self.x_shift)
        self.stacked = self.P.stacked()
        self.imp_set = frozenset(self.implicit)

    # ---- solver wrappers --------------------------------------------------

    def _lp(self, c, a_ub, b_ub, a_eq=None, b_eq=None):
        self.lp_count += 1
        return solve_lp(LinearProgram(c, a_ub, b_ub, a_eq, b_eq), self.tol)

    def _slice_eq(self, hyperplanes):
        a_eq = np.vstack([np.concatenate([a, np.zeros(self.P.k)])
                          for a, _ in hyperplanes])
        b_eq = np.array([b for _, b in hyperplanes])
        return a_eq, b_eq

    def _max_slack_on_region(self, row: int, a_eq, b_eq) -> float:
        rep = self._lp(-self.stacked[row], self.stacked, self.P.b, a_eq, b_eq)
        if rep.status != "optimal":
            raise EspError(f"slack LP on slice returned {rep.status}")
        return float(self.P.b[row] + rep.objective_value)

    def _max_slack_on_slice(self, row: int, hyperplanes) -> float:
        a_eq, b_eq = self._slice_eq(hyperplanes)
        return self._max_slack_on_region(row, a_eq, b_eq)

    def _tight_rows_on_region(self, candidates, a_eq, b_eq) -> list[int]:
        """Candidates with zero slack on the whole region {z <= b, eq}.

        One LP maximizes the summed slack of the remaining candidates.
        Slacks are nonnegative on the region, so a zero optimum settles
        every remaining row at once; a positive optimum exposes witnesses
        (rows slack at the maximizer) to discard before the next round.
        Single-row probes remain only for sums that stay positive without
        any one row crossing tolerance.
        """
        remaining = [int(i) for i in candidates]
        out: list[int] = []
        while remaining:
            c = -self.stacked[remaining].sum(axis=0)
            rep = self._lp(c, self.stacked, self.P.b, a_eq, b_eq)
            if rep.status != "optimal":
                raise EspError(f"slack LP on slice returned {rep.status}")
            sl = self.P.b[remaining] - self.stacked[remaining] @ rep.z_star
            total = float(self.P.b[remaining].sum() + rep.objective_value)
            witnessed = sl > self.tol.eq_tol
            if witnessed.any():
                remaining = [i for i, w in zip(remaining, witnessed) if not w]
                continue
            if total <= self.tol.eq_tol:
                out.extend(remaining)
                break
            j = remaining.pop(int(np.argmax(sl)))
            if self._max_slack_on_region(j, a_eq, b_eq) <= self.tol.eq_tol:
                out.append(j)
        return sorted(out)

    def _active_rows(self, z: np.ndarray) -> np.ndarray:
        return np.nonzero(np.abs(self.P.slack(z)) <= self.tol.eq_tol)[0]

    # ---- hyperplane reconstruction ------------------------------------------

    def _hyperplane_from_rows(self, eset):
        """Null-space combinations of the rows in ``eset`` that cancel the
        eliminated block give the affine hull of the face's shadow; a facet
        needs that hull to be exactly a hyperplane (rank 1)."""
        eset = sorted(int(i) for i in eset)
        if not eset:
            return None
        w, off = affine_projection_rows(
            self.P.C[eset], self.P.D[eset], self.P.b[eset], self.tol.rank_tol)
        if w.shape[0] == 0 or rank(w, self.tol.rank_tol) != 1:
            return None
        basis = row_space_basis(np.hstack([w, off[:, None]]), self.tol.rank_tol)
        if basis.shape[0] != 1:
            return None
        a, b = basis[0, :-1], float(basis[0, -1])
        norm = np.linalg.norm(a)
        if norm < 1e-12:
            return None
        a, b = a / norm, b / norm
        if b < 0.0:
            a, b = -a, -b
        if b <= self.tol.eq_tol:
            return None  # plane through the interior point: not a facet
        return a, b

    # ---- facet completion ----------------------------------------------------

    def _complete_facet(self, a: np.ndarray, b: float, witness_active):
        """Equality set of the whole slice of P on {a'x = b}, plus a witness.

        ``witness_active`` must contain every row that is tight on the whole
        slice (rows tight at any one slice point qualify).  One pruning LP
        finds a second witness point; candidates slack at either witness are
        discarded, the rest are settled by batched slack maximization.
        """
        n = self.P.d + self.P.k
        cand = [i for i in sorted(int(i) for i in witness_active)
                if i not in self.imp_set]
        push = np.ones(self.P.q)
        if self.implicit:
            push[self.implicit] = 0.0
        push[cand] = 0.0
        a_rows = np.hstack([self.stacked, push[:, None]])
        a_rows = np.vstack([a_rows, np.append(np.zeros(n), 1.0)])
        b_rows = np.append(self.P.b, 1.0)
        eq_a, eq_b = self._slice_eq([(a, b)])
        eq_a = np.hstack([eq_a, np.zeros((1, 1))])
        rep = self._lp(np.append(np.zeros(n), 1.0), a_rows, b_rows, eq_a, eq_b)
        if rep.status != "optimal":
            raise EspError(f"facet witness LP returned {rep.status}")
        z_int = rep.z_star[:n]
        slack_int = self.P.slack(z_int)
        cand = [i for i in cand if slack_int[i] <= self.tol.eq_tol]

        eset = set(self.imp_set)
        eset.update(self._tight_rows_on_region(cand, eq_a[:, :-1], eq_b))
        eset = tuple(sorted(eset))
        hp = self._hyperplane_from_rows(eset)
        if hp is not None:
            return Facet(eset, hp[0], hp[1]), z_int
        # A nearly singular tight-row system can defeat the null-space route
        # even though the rows do certify the plane (the cancelling
        # combination sits at the rank tolerance).  Fall back to a direct fit
        # against the plane the caller reconstructed from valid multipliers.
        if self._rows_fit_plane(eset, a, b):
            return Facet(eset, a, b), z_int
        raise EspError(f"facet equality set {eset} does not span a hyperplane")

    def _rows_fit_plane(self, eset, a: np.ndarray, b: float) -> bool:
        """Least-squares test that some combination of the rows reproduces
        the pure-x plane (a, b); tolerant of ill-conditioned row sets."""
        idx = sorted(int(i) for i in eset)
        if not idx:
            return False
        m = np.column_stack([self.P.C[idx], self.P.D[idx], self.P.b[idx]]).T
        rhs = np.concatenate([a, np.zeros(self.P.k), [b]])
        sol = np.linalg.lstsq(m, rhs, rcond=None)[0]
        return float(np.linalg.norm(m @ sol - rhs)) <= 1e-6 * max(1.0, abs(b))

    # ---- initialization --------------------------------------------------------

    def _dual_hyperplane(self, duals: np.ndarray):
        """Combine P's rows with the LP multipliers.  Because the multipliers
        cancel the internal block, the combination is a pure-x inequality
        valid on the whole shadow and tight at the optimizer; when the
        optimizer projects into a facet's relative interior it IS that
        facet's hyperplane."""
        lam = np.where(duals > 1e-9, duals, 0.0)
        a = self.P.C.T @ lam
        b = float(self.P.b @ lam)
        if np.abs(self.P.D.T @ lam).max(initial=0.0) > 1e-6:
            return None  # internal block did not cancel; unusable certificate
        norm = np.linalg.norm(a)
        if norm < 1e-9:
            return None
        return a / norm, b / norm

    def _initial_facet(self):
        d, k = self.P.d, self.P.k
        for _ in range(_MAX_GAMMA_DRAWS):
            self.gamma_draws += 1
            gamma = self.rng.standard_normal(d)
            gamma /= np.linalg.norm(gamma)
            # variables (r, y): max r  s.t.  r C gamma + D y <= b, r >= 0
            cols = np.hstack([(self.P.C @ gamma)[:, None], self.P.D])
            cols = np.vstack([cols, np.append(-1.0, np.zeros(k))])
            rhs = np.append(self.P.b, 0.0)
            rep = self._lp(np.append(1.0, np.zeros(k)), cols, rhs)
            if rep.status != "optimal":
                raise EspError(f"ray LP returned {rep.status}")
            z = np.concatenate([gamma * rep.z_star[0], rep.z_star[1:]])
            hp = self._dual_hyperplane(rep.dual_ub[:-1])  # last row is r >= 0
            if hp is None:
                continue
            try:
                return self._complete_facet(hp[0], hp[1], self._active_rows(z))
            except EspError:
                continue  # ray hit a ridge or lower face; redraw
        raise EspError(f"no facet found after {_MAX_GAMMA_DRAWS} ray draws")

    # ---- ridge search ------------------------------------------------------------

    def _reduced_system(self, facet: Facet):
        """Inequalities of the facet's shadow in facet-plane coordinates.

        On the affine hull of the face carrying the facet, the internal
        block is y = y0(x) + N zeta with N spanning null(D_E); substituting
        turns every row j outside E into  S_j x + T_j zeta <= t_j.
        Restricting x to the facet plane via x = b a + U u (U an orthonormal
        basis of the complement of a) yields rows over (u, zeta).
        """
        eidx = list(facet.eset)
        others = [j for j in range(self.P.q) if j not in set(eidx)]
        d_e = self.P.D[eidx]
        if self.P.k:
            # Near-null directions of D_E would blow up the pseudoinverse;
            # cut them at 1e-6 and carry them as extra fiber coordinates
            # instead, which sends the facet through the exact elimination
            # route rather than through a 1e9-conditioned substitution.
            # The cut is absolute, not relative to the top singular value:
            # rows are unit length, so an all-noise D_E (a pure-x facet row
            # with 1e-16 dust from upstream matrix products) must count as
            # rank zero, not rank one.
            u_e, sv, vt = np.linalg.svd(d_e)
            r = int((sv > _FIBER_RCOND).sum())
            n_z = vt[r:].T
            d_pinv = (vt[:r].T * (1.0 / sv[:r])) @ u_e[:, :r].T
        else:
            n_z = np.zeros((0, 0))
            d_pinv = np.zeros((0, len(eidx)))
        c_o, d_o = self.P.C[others], self.P.D[others]
        s_mat = c_o - d_o @ d_pinv @ self.P.C[eidx]
        t_vec = self.P.b[others] - d_o @ d_pinv @ self.P.b[eidx]
        t_mat = d_o @ n_z if self.P.k else np.zeros((len(others), 0))
        u_basis = orth_null_basis(facet.a[None, :], self.tol.rank_tol)
        x0 = facet.b * facet.a
        s_hat = s_mat @ u_basis
        t_hat = t_vec - s_mat @ x0
        return s_hat, t_mat, t_hat, u_basis

    def _candidate_groups(self, s_hat, t_mat, t_hat, u_basis):
        """Reduced rows free of the fiber coordinate, grouped by hyperplane.

        Also reports whether any row with an in-plane gradient still couples
        to the fiber; only such rows can hide a ridge that no single reduced
        row reveals.
        """
        groups = {}
        m = s_hat.shape[0]
        norms = np.linalg.norm(s_hat, axis=1)
        scale = np.maximum(1.0, np.maximum(norms, np.abs(t_hat)))
        if t_mat.shape[1]:
            pure = np.abs(t_mat).max(axis=1) <= 1e-8 * scale
        else:
            pure = np.ones(m, bool)
        live = norms > 1e-9 * scale
        for j in np.nonzero(pure & live)[0]:
            s = u_basis @ (s_hat[j] / norms[j])
            t = t_hat[j] / norms[j]
            key = _round_key(np.append(s, t))
            if key not in groups:
                groups[key] = (s, float(t))
        coupled = bool((~pure & live).any())
        return list(groups.values()), coupled

    def _verify_candidate(self, facet: Facet, s: np.ndarray, t: float):
        """Support LP on the lifted slice; accept iff the plane supports the
        facet and the touching set is exactly (d-2)-dimensional."""
        c = np.concatenate([s, np.zeros(self.P.k)])
        eq_a, eq_b = self._slice_eq([(facet.a, facet.b)])
        rep = self._lp(c, self.stacked, self.P.b, eq_a, eq_b)
        if rep.status != "optimal":
            raise EspError(f"ridge support LP returned {rep.status}")
        if abs(rep.objective_value - t) > 1e-6 * max(1.0, abs(t)):
            return None  # cuts the facet interior, or never touches it
        z1 = rep.z_star
        hyps = [(facet.a, facet.b), (s, t)]
        theta = self.rng.standard_normal(self.P.d + self.P.k)
        eq_a2, eq_b2 = self._slice_eq(hyps)
        rep2 = self._lp(theta, self.stacked, self.P.b, eq_a2, eq_b2)
        if rep2.status != "optimal":
            raise EspError(f"ridge vertex LP returned {rep2.status}")
        both = (set(map(int, self._active_rows(z1)))
                & set(map(int, self._active_rows(rep2.z_star))))
        eset = set(facet.eset) | self.imp_set
        # A row in the span of the ridge's defining system is tight on all of
        # it; only rows outside that span need a slack LP to rule out rows
        # that merely pass through the two sampled vertices.
        idx0 = sorted(eset)
        span = row_space_basis(
            np.vstack([np.column_stack([self.stacked[idx0], self.P.b[idx0]]),
                       np.concatenate([s, np.zeros(self.P.k), [t]])[None, :]]),
            self.tol.rank_tol)
        unsettled = []
        for i in sorted(both - eset):
            lifted = np.append(self.stacked[i], self.P.b[i])
            if in_row_space(lifted, span, 1e-7):
                eset.add(i)
            else:
                unsettled.append(i)
        if unsettled:
            eset.update(self._tight_rows_on_region(unsettled, eq_a2, eq_b2))
        eset = tuple(sorted(eset))
        idx = list(eset)
        w, _ = affine_projection_rows(
            self.P.C[idx], self.P.D[idx], self.P.b[idx], self.tol.rank_tol)
        r = 0 if w.shape[0] == 0 else rank(w, self.tol.rank_tol)
        if r == 2:
            return RidgeRecord(eset, s, t, facet.eset)
        if r < 2 and self._rows_fit_plane(eset, facet.a, facet.b) \
                and self._rows_fit_plane(eset, s, t):
            # ill-conditioned tight rows; they still pin both pencil planes
            return RidgeRecord(eset, s, t, facet.eset)
        return None  # touching set is lower-dimensional, not a ridge

    def _span_check(self, facet: Facet, ridges) -> bool:
        """Ridge normals must positively span the facet plane, otherwise the
        ridge list cannot enclose the facet and is incomplete."""
        if self.P.d <= 1:
            return True
        if not ridges:
            return False
        normals = np.vstack([r.a_r for r in ridges])
        m = len(ridges)
        u_basis = orth_null_basis(facet.a[None, :], self.tol.rank_tol)
        proj = normals @ u_basis
        # max tau  s.t.  sum lam_i n_i = 0, sum lam_i = 1, lam_i >= tau
        a_eq = np.hstack([proj.T, np.zeros((proj.shape[1], 1))])
        a_eq = np.vstack([a_eq, np.append(np.ones(m), 0.0)])
        b_eq = np.append(np.zeros(proj.shape[1]), 1.0)
        a_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
        rep = self._lp(np.append(np.zeros(m), 1.0), a_ub, np.zeros(m), a_eq, b_eq)
        return rep.status == "optimal" and rep.objective_value > self.tol.feas_tol

    def _ridge_search(self, facet: Facet, prune: bool = True):
        """All ridges of a facet.

        When the facet's equality set pins the fiber (the reduced system has
        no zeta coordinate left), every ridge appears as a single reduced
        row, so the grouped candidates are complete.  A facet whose preimage
        still has fiber freedom can border neighbours that only show up as
        row combinations; for those the fiber is removed exactly, either by
        walking the patch one dimension down or by eliminating outright.
        """
        s_hat, t_mat, t_hat, u_basis = self._reduced_system(facet)
        groups, coupled = self._candidate_groups(s_hat, t_mat, t_hat, u_basis)
        if prune:
            groups = self._prune_groups(groups, u_basis)
        found = {}
        for s, t in groups:
            rec = self._verify_candidate(facet, s, t)
            if rec is not None and rec.eset not in found:
                found[rec.eset] = rec
        if coupled:
            # Route 1: LP-free pair elimination under a hard row budget;
            # box-like fibers collapse cheaply and dense coupling overflows
            # fast.  Route 2: hull of the facet patch, paying per patch
            # vertex.  Route 3: walk the patch one dimension down.  Route 4:
            # LP-pruned elimination, slow but bounded.
            try:
                extra = self._eliminated_candidates(
                    s_hat, t_mat, t_hat, u_basis, max_rows=3000, prune=False)
            except RuntimeError:
                extra = None
            if not extra:
                # an empty candidate list is as useless as an overflow
                try:
                    extra = self._hull_candidates(facet, u_basis)
                except EspError:
                    extra = None
            if not extra and t_mat.shape[1] >= 3:
                try:
                    extra = self._recursed_candidates(
                        s_hat, t_mat, t_hat, u_basis)
                except EspError:
                    extra = None
            if not extra:
                try:
                    extra = self._eliminated_candidates(
                        s_hat, t_mat, t_hat, u_basis, max_rows=8000,
                        prune=True)
                except RuntimeError as exc:
                    raise EspError(f"fiber elimination overflowed: {exc}")
            for s, t in extra:
                near_known = any(
                    np.abs(s - r.a_r).max() < 1e-7 and abs(t - r.b_r) < 1e-7
                    for r in found.values())
                if near_known:
                    continue
                rec = self._verify_candidate(facet, s, t)
                if rec is not None and rec.eset not in found:
                    found[rec.eset] = rec
        if not self._span_check(facet, list(found.values())):
            if prune:
                # pruning judges redundancy at fixed tolerances; on a
                # knife-edge patch it can eat a real ridge.  Redo the search
                # verifying every candidate before declaring failure.
                return self._ridge_search(facet, prune=False)
            raise EspError(
                f"ridges found for facet {facet.eset} do not enclose it")
        return list(found.values())

    def _prune_groups(self, groups, u_basis):
        """Drop candidate planes that are redundant against the other pure
        rows; implication by a subset extends to the full patch system, so
        nothing irredundant is lost.  Saves one full-space support LP per
        discarded plane, which is most of them on facet-rich shadows."""
        if len(groups) <= 2:
            return groups
        u_rows = np.vstack([u_basis.T @ s for s, _ in groups])
        u_rhs = np.array([t for _, t in groups])
        keep = _enum_irredundant(u_rows, u_rhs) if u_rows.shape[1] <= 4 else None
        if keep is None:
            from espproj.baselines import _prune_redundant
            _, _, used, keep = _prune_redundant(u_rows, u_rhs, self.tol)
            self.lp_count += used
        return [groups[i] for i in keep]

    def _hull_candidates(self, facet: Facet, u_basis):
        """Ridge candidates from the convex hull of the facet patch.

        The patch is the facet's shadow in its own plane coordinates
        (dimension d-1); its vertices are gathered by support LPs over the
        slice of P and its hull facets are exactly the ridge planes.  Cost
        scales with the patch's vertex count instead of with the size of
        the face lattice underneath it, which makes this the cheap route
        for fat fibers.  The growth loop is self-correcting: any hull plane
        that still cuts the patch gets pushed outward by its own support
        point, so the final plane list over-approximates nothing.
        """
        eq_a, eq_b = self._slice_eq([(facet.a, facet.b)])
        x0 = facet.b * facet.a
        m = u_basis.shape[1]

        def support(direction_u):
            s = u_basis @ direction_u
            c = np.concatenate([s, np.zeros(self.P.k)])
            rep = self._lp(c, self.stacked, self.P.b, eq_a, eq_b)
            if rep.status != "optimal":
                raise EspError(f"patch support LP returned {rep.status}")
            u = u_basis.T @ (rep.z_star[:self.P.d] - x0)
            return u, float(rep.objective_value - s @ x0)

        if m == 1:
            out = []
            for sgn in (1.0, -1.0):
                _, val = support(np.array([sgn]))
                s = u_basis[:, 0] * sgn
                out.append((s, val + float(s @ x0)))
            return out

        points: dict[bytes, np.ndarray] = {}

        def add_point(u) -> bool:
            key = _round_key(u)
            if key in points:
                return False
            points[key] = u
            return True

        for i in range(m):
            for sgn in (1.0, -1.0):
                e = np.zeros(m)
                e[i] = sgn
                add_point(support(e)[0])
        attempts = 0
        while True:
            arr = np.array(list(points.values()))
            if len(arr) >= m + 1:
                try:
                    ConvexHull(arr)
                    break
                except QhullError:
                    pass
            attempts += 1
            if attempts > 30 * m:
                raise EspError("facet patch looks flat to the hull")
            direction = self.rng.standard_normal(m)
            add_point(support(direction / np.linalg.norm(direction))[0])

        verified: set[bytes] = set()
        for _ in range(300):
            arr = np.array(list(points.values()))
            try:
                hull = ConvexHull(arr)
            except QhullError as exc:
                raise EspError(f"patch hull rebuild failed: {exc}")
            planes = {}
            for eq in hull.equations:
                normal, rhs = eq[:-1], -eq[-1]
                key = np.round(np.append(normal, rhs), 7).tobytes()
                planes.setdefault(key, (normal, rhs))
            grew = False
            for key, (normal, rhs) in planes.items():
                if key in verified:
                    continue
                u, val = support(normal)
                if val > rhs + 1e-7 * max(1.0, abs(rhs)):
                    grew = add_point(u) or grew
                else:
                    verified.add(key)
            if not grew:
                out = []
                for normal, rhs in planes.values():
                    nrm = float(np.linalg.norm(normal))
                    s = u_basis @ (normal / nrm)
                    t = rhs / nrm + float(s @ x0)
                    out.append((s, t))
                return out
        raise EspError("patch hull failed to settle")

    def _recursed_candidates(self, s_hat, t_mat, t_hat, u_basis):
        """Exact fallback for fat fibers: in facet-plane coordinates the
        patch is itself a shadow, so walk it one dimension down and read the
        ridge planes off the sub-result's facets."""
        norms = np.linalg.norm(np.hstack([s_hat, t_mat]), axis=1)
        live = norms > 1e-10 * np.maximum(1.0, np.abs(t_hat))
        if (t_hat[~live] < -self.tol.feas_tol).any():
            raise EspError("patch system reduced to an infeasible row")
        sub = HPolytope(s_hat[live], t_mat[live], t_hat[live])
        cfg = EspConfig(mode=self.cfg.mode, epsilon=self.cfg.epsilon,
                        lambda_scale=self.cfg.lambda_scale,
                        rng_seed=self.cfg.rng_seed + 7919)
        res = esp_project(sub, cfg, self.tol)
        self.lp_count += res.lp_count
        self.qp_count += res.qp_count
        self.degeneracy_events += res.degeneracy_events
        self.anomalies += res.anomalies
        if res.status != "complete":
            raise EspError(f"patch walk ended with status {res.status}")
        return [(u_basis @ f.a, float(f.b)) for f in res.facets]

    def _eliminated_candidates(self, s_hat, t_mat, t_hat, u_basis,
                               max_rows: int = 5000, prune: bool = True):
        """Eliminate the fiber coordinates outright, then prune survivors
        in facet-plane coordinates so the expensive full-space verification
        only sees plausible edges.  RuntimeError (row budget exceeded)
        propagates to the caller, which picks another route.
        """
        from espproj.baselines import _prune_redundant, eliminate_columns

        rows = np.hstack([s_hat, t_mat])
        cols = list(range(s_hat.shape[1], rows.shape[1]))
        kept, rhs, lp_used = eliminate_columns(
            rows, t_hat.copy(), cols, tol=self.tol, prune=prune,
            max_rows=max_rows)
        self.lp_count += lp_used
        if len(kept) > 1:
            keep = (_enum_irredundant(kept, rhs)
                    if kept.shape[1] <= 4 else None)
            if keep is None or not len(keep):
                # enumeration declined, or judged everything redundant,
                # which for a nonempty system means it was fed garbage
                kept, rhs, used, _ = _prune_redundant(kept, rhs, self.tol)
                self.lp_count += used
            else:
                kept, rhs = kept[keep], rhs[keep]
        out, seen = [], set()
        for row, r in zip(kept, rhs):
            nrm = np.linalg.norm(row)
            if nrm <= 1e-9 * max(1.0, abs(r)):
                continue
            s = u_basis @ (row / nrm)
            t = float(r / nrm)
            key = _round_key(np.append(s, t))
            if key not in seen:
                seen.add(key)
                out.append((s, t))
        return out

    # ---- adjacent facet search ----------------------------------------------------

    def _resolve_recursive(self, x_star, candidates):
        """One slack LP per candidate row over the fiber {y : D y <= b - C x*}."""
        rows_b = self.P.b - self.P.C @ x_star
        out = []
        for j in candidates:
            if self.P.k == 0:
                out.append(int(j))
                continue
            rep = self._lp(-self.P.D[j], self.P.D, rows_b)
            if rep.status != "optimal":
                raise EspError(f"fiber slack LP returned {rep.status}")
            if rows_b[j] + rep.objective_value <= self.tol.eq_tol:
                out.append(int(j))
        return out

    def _resolve_regularized(self, x_star, y_start):
        """One strictly convex QP over the fiber; the unique minimizer makes
        the tight row set unambiguous without any further solves.  Active-set
        QPs can stall on heavily degenerate working sets, which is the one
        regime this routine is called in; a stall returns None so the caller
        can fall back to the slack LPs instead of sinking the run."""
        self.qp_count += 1
        rows_b = self.P.b - self.P.C @ x_star
        h = self.cfg.lambda_scale * np.eye(self.P.k)
        try:
            rep = solve_qp(h, np.zeros(self.P.k), self.P.D, rows_b,
                           start=y_start, tol=self.tol)
        except SolverFailure:
            self.anomalies += 1
            return None
        if rep.status != "optimal":
            raise EspError(f"fiber QP returned {rep.status}")
        z = np.concatenate([x_star, rep.z_star])
        return [int(i) for i in self._active_rows(z)]

    def _adjacent_facet(self, facet: Facet, ridge: RidgeRecord):
        ridge_span = row_space_basis(
            np.vstack([np.append(facet.a, facet.b),
                       np.append(ridge.a_r, ridge.b_r)]),
            self.tol.rank_tol)
        eps = self.cfg.epsilon
        for _ in range(_MAX_EPS_HALVINGS + 1):
            slab = facet.b - eps * max(1.0, abs(facet.b))
            c = np.concatenate([ridge.a_r, np.zeros(self.P.k)])
            eq_a, eq_b = self._slice_eq([(facet.a, slab)])
            rep = self._lp(c, self.stacked, self.P.b, eq_a, eq_b)
            if rep.status != "optimal":
                eps *= 0.5
                continue
            hp = self._dual_hyperplane(rep.dual_ub)
            if hp is None:
                eps *= 0.5
                continue
            a_adj, b_adj = hp
            if (abs(a_adj @ facet.a) > 1.0 - 1e-9
                    and abs(b_adj - facet.b) <= 1e-6 * max(1.0, abs(facet.b))):
                # recovered the starting facet; slab overshot.  The offset
                # check matters: knife-edge shadows have genuinely distinct
                # facets whose normals agree to 1e-9 but whose planes do not.
                eps *= 0.5
                continue
            if not in_row_space(np.append(a_adj, b_adj), ridge_span, 1e-6):
                eps *= 0.5
                continue  # plane does not contain the ridge; slab overshot
            z = rep.z_star
            x_star = z[:self.P.d]
            if rep.multiplicity_flag:
                if self.cfg.mode == "plain":
                    raise DegenerateInstance(
                        f"degenerate vertex at ridge {ridge.eset}; rerun in "
                        "recursive or accelerated mode")
                self.degeneracy_events += 1
                if self.cfg.mode == "recursive":
                    witness = self._resolve_recursive(
                        x_star, [int(i) for i in rep.active_set])
                else:
                    witness = self._resolve_regularized(x_star, z[self.P.d:])
            else:
                witness = [int(i) for i in rep.active_set]
            try:
                return self._complete_facet(a_adj, b_adj, witness)
            except EspError:
                eps *= 0.5
                continue  # optimizer landed on a lower face; tighten the slab
        raise EspError(
            f"adjacent facet search failed at ridge {ridge.eset} after "
            f"{_MAX_EPS_HALVINGS} slab refinements")

    # ---- main loop -------------------------------------------------------------------

    def run(self) -> ProjectionResult:
        if self.P.d == 1:
            return self._run_interval()

        facets: dict[bytes, Facet] = {}
        ridge_log: dict[tuple[int, ...], RidgeRecord] = {}
        pending: deque = deque()

        def facet_key(f: Facet) -> bytes:
            return _round_key(np.append(f.a, f.b))

        def log_ridges(recs) -> None:
            for rec in recs:
                known = ridge_log.get(rec.eset)
                if known is None:
                    rec.seen_by.add(rec.parent_facet)
                    ridge_log[rec.eset] = rec
                    pending.append(rec)
                else:
                    known.seen_by.add(rec.parent_facet)
                    if len(known.seen_by) > 2:
                        self.anomalies += 1

        f0, _ = self._initial_facet()
        facets[facet_key(f0)] = f0
        log_ridges(self._ridge_search(f0))

        status = "complete"
        while pending:
            ridge = pending.popleft()
            if ridge_log[ridge.eset].visit_count >= 2:
                continue
            parent = next(f for f in facets.values()
                          if f.eset == ridge.parent_facet)
            adj, _ = self._adjacent_facet(parent, ridge)
            key = facet_key(adj)
            if key not in facets:
                # rounding keys alone can split one plane into two when a
                # coordinate sits near a key-digit boundary; double-check
                # against the stored planes before treating it as new
                for f in facets.values():
                    if (np.abs(f.a - adj.a).max() <= 1e-7
                            and abs(f.b - adj.b) <= 1e-7):
                        key = facet_key(f)
                        break
            if key in facets:
                # the neighbour's own search described this ridge under a
                # different equality set (a tolerance artifact); credit the
                # sighting so the log can close, but flag it
                ridge_log[ridge.eset].seen_by.add(adj.eset)
                self.anomalies += 1
                continue
            facets[key] = adj
            if (self.cfg.max_facets is not None
                    and len(facets) > self.cfg.max_facets):
                status = "aborted-max-facets"
                break
            log_ridges(self._ridge_search(adj))

        if status == "complete":
            bad = [r.eset for r in ridge_log.values() if r.visit_count != 2]
            if bad:
                raise EspError(f"ridges not visited exactly twice: {bad}")

        out = [Facet(f.eset, f.a, float(f.b + f.a @ self.x_shift))
               for f in facets.values()]
        out.sort(key=lambda f: tuple(np.round(np.append(f.a, f.b), _KEY_DECIMALS)))
        return ProjectionResult(
            facets=out,
            ridges=list(ridge_log.values()),
            lp_count=self.lp_count,
            qp_count=self.qp_count,
            degeneracy_events=self.degeneracy_events,
            gamma_draws=self.gamma_draws,
            anomalies=self.anomalies,
            status=status,
        )

    def _run_interval(self) -> ProjectionResult:
        facets = []
        for sign in (1.0, -1.0):
            c = np.concatenate([[sign], np.zeros(self.P.k)])
            rep = self._lp(c, self.stacked, self.P.b)
            if rep.status != "optimal":
                raise EspError(f"interval LP returned {rep.status}")
            f, _ = self._complete_facet(
                np.array([sign]), rep.objective_value, rep.active_set)
            facets.append(Facet(f.eset, f.a, float(f.b + f.a @ self.x_shift)))
        facets.sort(key=lambda f: tuple(np.round(np.append(f.a, f.b), _KEY_DECIMALS)))
        return ProjectionResult(
            facets=facets, ridges=[],
            lp_count=self.lp_count, qp_count=self.qp_count,
            degeneracy_events=self.degeneracy_events,
            gamma_draws=self.gamma_draws, anomalies=self.anomalies,
            status="complete")


def esp_project(poly: HPolytope, cfg: EspConfig | None = None,
                tol: ToleranceConfig | None = None) -> ProjectionResult:
    """Enumerate the facets of the shadow of ``poly`` on its kept block.

    Returns the shadow as an irredundant facet list {x : G x <= g} together
    with the ridge visit log and solver-call counters.  Raises
    DegenerateInstance in plain mode on a degenerate vertex, EspError when
    the shadow is not full-dimensional or the facet walk cannot close.
    """
    cfg = cfg or EspConfig()
    tol = tol or ToleranceConfig()
    if poly.d < 1:
        raise ValueError("nothing to project onto: d must be >= 1")
    t0 = time.perf_counter()
    engine = _Engine(poly, cfg, tol)
    result = engine.run()
    result.wall_time_s = time.perf_counter() - t0
    return result
