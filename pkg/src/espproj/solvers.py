"""LP and strictly convex QP solvers behind one report type.

LPs go to HiGHS (scipy.optimize.linprog), which returns a basic optimal
point with exact complementary duals.  The wrapper restates everything in
maximize-form, recovers the multipliers in our sign convention, verifies
strong duality before returning, reports the active set at the returned
point, and flags evidence of multiple optima (dependent or surplus tight
rows), which is what duplicated constraint rows create.

The QP solver is a primal active-set method on the KKT system, for
strictly convex objectives 0.5 z'Hz - d'z.  Its minimizer is unique, which
is exactly why the projection engine uses it to break LP degeneracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from espproj.linalg import ToleranceConfig, rank


class SolverFailure(RuntimeError):
    """The solver reported a numerical breakdown or an unusable answer."""


@dataclass
class LinearProgram:
    """maximize c'z  subject to  A_ub z <= b_ub,  A_eq z = b_eq, z free."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.a_ub = np.atleast_2d(np.asarray(self.a_ub, dtype=float))
        self.b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        n = self.c.size
        if self.a_ub.size == 0:
            self.a_ub = np.zeros((0, n))
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.a_ub.shape != (self.b_ub.size, n):
            raise ValueError("a_ub/b_ub shape mismatch")
        if self.a_eq.shape != (self.b_eq.size, n):
            raise ValueError("a_eq/b_eq shape mismatch")


@dataclass
class SolveReport:
    status: str                      # optimal | infeasible | unbounded
    z_star: np.ndarray | None = None
    objective_value: float = np.nan
    active_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    multiplicity_flag: bool = False
    iterations: int = 0
    dual_ub: np.ndarray | None = None    # multipliers on a_ub rows (>= 0)
    dual_eq: np.ndarray | None = None    # multipliers on a_eq rows (free sign)


def solve_lp(lp: LinearProgram, tol: ToleranceConfig | None = None) -> SolveReport:
    """HiGHS behind the maximize-form contract in the module docstring."""
    tol = tol or ToleranceConfig()
    n = lp.c.size
    m_ub = lp.b_ub.size
    m_eq = lp.b_eq.size

    res = linprog(
        -lp.c,
        A_ub=lp.a_ub if m_ub else None,
        b_ub=lp.b_ub if m_ub else None,
        A_eq=lp.a_eq if m_eq else None,
        b_eq=lp.b_eq if m_eq else None,
        bounds=(None, None),
        method="highs",
    )
    if res.status == 2:
        return SolveReport(status="infeasible", iterations=int(res.nit))
    if res.status == 3:
        return SolveReport(status="unbounded", iterations=int(res.nit))
    if res.status != 0:
        raise SolverFailure(f"linprog status {res.status}: {res.message}")

    z = np.asarray(res.x, dtype=float)
    obj = float(lp.c @ z)

    # multipliers restated for maximize-form: c = A_ub' y_ub + A_eq' y_eq,
    # y_ub >= 0, complementary because HiGHS returns a basic solution
    y_ub = -np.asarray(res.ineqlin.marginals, dtype=float) if m_ub else np.zeros(0)
    y_eq = -np.asarray(res.eqlin.marginals, dtype=float) if m_eq else np.zeros(0)
    if m_ub and (y_ub < -1e-6).any():
        raise SolverFailure("negative multiplier on an inequality row")
    y_ub[y_ub < 1e-12] = 0.0  # clamp sign noise on degenerate bases
    dual_obj = float(y_ub @ lp.b_ub) + float(y_eq @ lp.b_eq)
    gap = abs(obj - dual_obj)
    if gap > 1e-6 * max(1.0, abs(obj)):
        raise SolverFailure(f"duality gap {gap:.3e} exceeds certificate tolerance")
    grad = lp.c.copy()
    if m_ub:
        grad -= lp.a_ub.T @ y_ub
    if m_eq:
        grad -= lp.a_eq.T @ y_eq
    if np.abs(grad).max(initial=0.0) > 1e-6 * max(1.0, float(np.abs(lp.c).max())):
        raise SolverFailure("multipliers fail stationarity")

    scale = max(1.0, float(np.abs(lp.b_ub).max()) if m_ub else 1.0)
    if m_ub and (lp.a_ub @ z - lp.b_ub).max(initial=-np.inf) > 1e-6 * scale:
        raise SolverFailure("returned point violates inequality rows")
    if m_eq and np.abs(lp.a_eq @ z - lp.b_eq).max() > 1e-6 * scale:
        raise SolverFailure("returned point violates equality rows")

    resid = lp.a_ub @ z - lp.b_ub if m_ub else np.zeros(0)
    active = np.nonzero(np.abs(resid) <= tol.eq_tol)[0]

    # multiplicity evidence: the tight rows at the returned point are not an
    # independent system, either because there are more of them than
    # variables or because some are linearly dependent (coincident rows).
    # This is exactly what duplicated rows create; a simple polytope never
    # trips it no matter which optimum the simplex lands on.
    tight_count = active.size + m_eq
    multiplicity = bool(tight_count > n)
    if not multiplicity and active.size:
        tight = np.vstack([lp.a_ub[active], lp.a_eq]) if m_eq else lp.a_ub[active]
        multiplicity = bool(rank(tight, tol.rank_tol) < tight_count)

    return SolveReport(
        status="optimal",
        z_star=z,
        objective_value=obj,
        active_set=active,
        multiplicity_flag=multiplicity,
        iterations=int(res.nit),
        dual_ub=y_ub,
        dual_eq=y_eq,
    )


def feasible_point(a_ub: np.ndarray, b_ub: np.ndarray,
                   a_eq: np.ndarray | None = None,
                   b_eq: np.ndarray | None = None,
                   tol: ToleranceConfig | None = None) -> np.ndarray | None:
    """One feasibility solve; returns a basic feasible point or None."""
    n = np.atleast_2d(a_ub).shape[1] if np.asarray(a_ub).size else np.atleast_2d(a_eq).shape[1]
    rep = solve_lp(LinearProgram(np.zeros(n), a_ub, b_ub, a_eq, b_eq), tol)
    return rep.z_star if rep.status == "optimal" else None


def solve_qp(h: np.ndarray, d: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray,
             a_eq: np.ndarray | None = None, b_eq: np.ndarray | None = None,
             start: np.ndarray | None = None,
             tol: ToleranceConfig | None = None) -> SolveReport:
    """minimize 0.5 z'Hz - d'z  s.t.  A_ub z <= b_ub, A_eq z = b_eq.

    H must be symmetric positive definite (checked; violations raise
    ValueError).  ``start`` may supply a known feasible point, otherwise a
    feasibility LP runs first.  The reported active set is recomputed from
    the minimizer, so duplicated rows are all reported.
    """
    tol = tol or ToleranceConfig()
    h = np.atleast_2d(np.asarray(h, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    n = d.size
    a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float)) if np.asarray(a_ub).size else np.zeros((0, n))
    b_ub = np.asarray(b_ub, dtype=float).ravel()
    if a_eq is None:
        a_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    else:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        b_eq = np.asarray(b_eq, dtype=float).ravel()
    try:
        np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise ValueError("QP objective matrix must be positive definite") from exc

    if start is not None:
        z = np.asarray(start, dtype=float).copy()
        if ((a_ub @ z - b_ub) > tol.feas_tol).any() or (
                a_eq.size and np.abs(a_eq @ z - b_eq).max() > tol.feas_tol):
            start = None
    if start is None:
        z = feasible_point(a_ub, b_ub, a_eq, b_eq, tol)
        if z is None:
            return SolveReport(status="infeasible")

    m_eq = a_eq.shape[0]
    # working set: independent equality rows plus currently-active inequalities
    work: list[int] = []          # inequality row indices
    rows = [a_eq[i] for i in range(m_eq)]

    def _independent(vec: np.ndarray) -> bool:
        if not rows:
            return bool(np.linalg.norm(vec) > 1e-12)
        mat = np.vstack(rows + [vec])
        sig = np.linalg.svd(mat, compute_uv=False)
        return bool(sig[-1] > 1e-10 * sig[0])

    # drop dependent equality rows up front (consistency already verified)
    rows = []
    eq_keep = []
    for i in range(m_eq):
        if _independent(a_eq[i]):
            rows.append(a_eq[i])
            eq_keep.append(i)

    slack0 = b_ub - a_ub @ z if a_ub.size else np.zeros(0)
    for i in np.nonzero(np.abs(slack0) <= tol.eq_tol)[0]:
        if _independent(a_ub[i]):
            rows.append(a_ub[i])
            work.append(int(i))

    max_iter = 50 * (n + a_ub.shape[0]) + 200
    for it in range(max_iter):
        g = h @ z - d
        nw = len(rows)
        kkt = np.zeros((n + nw, n + nw))
        kkt[:n, :n] = h
        if nw:
            wmat = np.vstack(rows)
            kkt[:n, n:] = wmat.T
            kkt[n:, :n] = wmat
        rhsv = np.concatenate([-g, np.zeros(nw)])
        try:
            sol = np.linalg.solve(kkt, rhsv)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhsv, rcond=None)
        p = sol[:n]
        lam = sol[n:]

        if np.linalg.norm(p) <= 1e-11 * max(1.0, np.linalg.norm(z)):
            n_eqrows = len(eq_keep)
            ineq_lams = lam[n_eqrows:]
            if ineq_lams.size == 0 or ineq_lams.min() >= -1e-9:
                break
            drop = int(np.argmin(ineq_lams))
            del rows[n_eqrows + drop]
            del work[drop]
            continue

        alpha = 1.0
        block = -1
        if a_ub.size:
            adotp = a_ub @ p
            slack = b_ub - a_ub @ z
            for i in range(a_ub.shape[0]):
                if i in work or adotp[i] <= 1e-12:
                    continue
                ratio = slack[i] / adotp[i]
                if ratio < alpha - 1e-14:
                    alpha = max(ratio, 0.0)
                    block = i
        z = z + alpha * p
        if block >= 0 and alpha < 1.0:
            rows.append(a_ub[block])
            work.append(block)
    else:
        raise SolverFailure("active-set QP iteration guard tripped")

    obj = float(0.5 * z @ h @ z - d @ z)
    resid = a_ub @ z - b_ub if a_ub.size else np.zeros(0)
    active = np.nonzero(np.abs(resid) <= tol.eq_tol)[0]
    return SolveReport(
        status="optimal",
        z_star=z,
        objective_value=obj,
        active_set=active,
        multiplicity_flag=False,
        iterations=it + 1,
    )
