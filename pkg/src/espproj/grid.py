"""Dispatch models for a transmission system coupled to radial feeders.

Builds the transmission (DC) and feeder (linearized DistFlow) dispatch LPs
from JSON case data, reduces each feeder to a small polytope over its tie
schedule plus one internal-cost epigraph variable, projects that polytope
with the facet-walk engine, and solves three schemes on top:

* joint        one monolithic LP over both systems (the reference answer)
* coordinated  transmission LP augmented with each feeder's projected
               region; feeder internals recovered afterwards by lifting
* independent  each feeder self-schedules against the exchange price, then
               the transmission side runs with tie flows frozen

Cost accounting is identical across schemes: generation priced by each
unit's curve, shed and curtailment at penalty prices, and the exchange
term c_ex * tie counted once (in the feeder bucket).  The joint and
coordinated optima then agree exactly, which is the whole point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from espproj.esp import EspConfig, ProjectionResult, esp_project
from espproj.linalg import ToleranceConfig
from espproj.polytope import HPolytope, lift_point
from espproj.solvers import LinearProgram, solve_lp


class GridError(RuntimeError):
    """Invalid case data or a model that cannot be assembled."""


class InfeasibleCase(GridError):
    """LP infeasible; carries an elastic-relaxation row report."""

    def __init__(self, message: str, report: list | None = None):
        super().__init__(message)
        self.report = report or []


# ---------------------------------------------------------------------------
# Case data
# ---------------------------------------------------------------------------


@dataclass
class Prices:
    load_shed: float
    curtailment: float
    exchange: float

    def __post_init__(self) -> None:
        for name in ("load_shed", "curtailment", "exchange"):
            if getattr(self, name) < 0:
                raise GridError(f"price {name} must be nonnegative")


@dataclass
class TsoBus:
    id: str
    load: np.ndarray
    shed_cap: float = 0.0


@dataclass
class TsoLine:
    from_bus: str
    to_bus: str
    susceptance: float
    flow_min: float
    flow_max: float

    @property
    def key(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass
class TsoGen:
    id: str
    bus: str
    cost: float | list       # marginal price, or [[slope, intercept], ...]
    p_min: float
    p_max: float
    ramp: float

    def segments(self) -> list[tuple[float, float]]:
        if isinstance(self.cost, (int, float)):
            return [(float(self.cost), 0.0)]
        return [(float(s), float(i)) for s, i in self.cost]

    def cost_of(self, p: float) -> float:
        return max(s * p + i for s, i in self.segments())


@dataclass
class Renewable:
    id: str
    bus: str
    forecast: np.ndarray


@dataclass
class TieLine:
    id: str
    bus: str
    dso: str
    p_min: float
    p_max: float


@dataclass
class TsoCase:
    id: str
    base_mva: float
    horizon: int
    reference_bus: str
    prices: Prices
    theta_min: float
    theta_max: float
    buses: list[TsoBus]
    lines: list[TsoLine]
    thermal: list[TsoGen]
    renewables: list[Renewable]
    ties: list[TieLine]

    def __post_init__(self) -> None:
        t = self.horizon
        if t < 1:
            raise GridError("horizon must be at least 1")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridError("duplicate bus ids")
        if self.reference_bus not in ids:
            raise GridError(f"reference bus {self.reference_bus!r} not in buses")
        if self.theta_min > 0 or self.theta_max < 0:
            raise GridError("angle bounds must straddle the reference value 0")
        for b in self.buses:
            b.load = np.asarray(b.load, dtype=float)
            if b.load.size != t:
                raise GridError(f"bus {b.id}: load series length != horizon")
            if b.shed_cap < 0:
                raise GridError(f"bus {b.id}: negative shed cap")
        known = set(ids)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise GridError(f"line {ln.key}: unknown endpoint")
            if ln.flow_min > ln.flow_max:
                raise GridError(f"line {ln.key}: bounds out of order")
        for g in self.thermal:
            if g.bus not in known:
                raise GridError(f"generator {g.id}: unknown bus")
            if g.p_min > g.p_max:
                raise GridError(f"generator {g.id}: bounds out of order")
            if g.ramp < 0:
                raise GridError(f"generator {g.id}: negative ramp")
            if not g.segments():
                raise GridError(f"generator {g.id}: empty cost curve")
        for r in self.renewables:
            if r.bus not in known:
                raise GridError(f"renewable {r.id}: unknown bus")
            r.forecast = np.asarray(r.forecast, dtype=float)
            if r.forecast.size != t:
                raise GridError(f"renewable {r.id}: forecast length != horizon")
            if (r.forecast < 0).any():
                raise GridError(f"renewable {r.id}: negative forecast")
        for tie in self.ties:
            if tie.bus not in known:
                raise GridError(f"tie {tie.id}: unknown bus")
            if tie.p_min > tie.p_max:
                raise GridError(f"tie {tie.id}: bounds out of order")
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.lines and len(self.buses) > 1:
            raise GridError("network is disconnected")
        parent = {b.id: b.id for b in self.buses}

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for ln in self.lines:
            parent[find(ln.from_bus)] = find(ln.to_bus)
        roots = {find(b.id) for b in self.buses}
        if len(roots) > 1:
            raise GridError("network is disconnected")


@dataclass
class DsoBus:
    id: str
    load_p: np.ndarray
    load_q: np.ndarray
    shed_cap: float = 0.0


@dataclass
class DsoLine:
    from_bus: str
    to_bus: str
    conductance: float
    susceptance: float
    s_cap: float

    @property
    def key(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass
class DsoGen:
    id: str
    bus: str
    cost: float              # feeder units carry a single marginal price
    p_max: float
    q_min: float
    q_max: float
    ramp: float


@dataclass
class DsoCase:
    id: str
    base_mva: float
    horizon: int
    interface_bus: str
    prices: Prices
    segments: int
    theta_min: float
    theta_max: float
    v_sq_min: float
    v_sq_max: float
    buses: list[DsoBus]
    lines: list[DsoLine]
    thermal: list[DsoGen]
    renewables: list[Renewable]

    def __post_init__(self) -> None:
        t = self.horizon
        if t < 1:
            raise GridError("horizon must be at least 1")
        if self.segments < 4:
            raise GridError("need at least 4 cone segments")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridError("duplicate bus ids")
        if self.interface_bus not in ids:
            raise GridError(f"interface bus {self.interface_bus!r} not in buses")
        if not (self.v_sq_min <= 1.0 <= self.v_sq_max):
            raise GridError("voltage-square bounds must contain 1.0 (root value)")
        if self.theta_min > 0 or self.theta_max < 0:
            raise GridError("angle bounds must straddle 0")
        for b in self.buses:
            b.load_p = np.asarray(b.load_p, dtype=float)
            b.load_q = np.asarray(b.load_q, dtype=float)
            if b.load_p.size != t or b.load_q.size != t:
                raise GridError(f"bus {b.id}: load series length != horizon")
            if b.shed_cap < 0:
                raise GridError(f"bus {b.id}: negative shed cap")
        known = set(ids)
        for g in self.thermal:
            if g.bus not in known:
                raise GridError(f"generator {g.id}: unknown bus")
            if g.p_max < 0 or g.q_min > g.q_max or g.ramp < 0:
                raise GridError(f"generator {g.id}: bounds out of order")
        for r in self.renewables:
            if r.bus not in known:
                raise GridError(f"renewable {r.id}: unknown bus")
            r.forecast = np.asarray(r.forecast, dtype=float)
            if r.forecast.size != t:
                raise GridError(f"renewable {r.id}: forecast length != horizon")
        self._check_tree()

    def _check_tree(self) -> None:
        if len(self.lines) != len(self.buses) - 1:
            raise GridError("feeder is not radial (line count != bus count - 1)")
        adj: dict[str, list[str]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            if ln.from_bus not in adj or ln.to_bus not in adj:
                raise GridError(f"line {ln.key}: unknown endpoint")
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {self.interface_bus}
        stack = [self.interface_bus]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != len(self.buses):
            raise GridError("feeder is not connected to the interface bus")


# ---------------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------------


def _prices(obj: dict) -> Prices:
    return Prices(load_shed=float(obj["load_shed"]),
                  curtailment=float(obj["curtailment"]),
                  exchange=float(obj["exchange"]))


def load_tso_case(path: str | Path) -> TsoCase:
    raw = json.loads(Path(path).read_text())
    try:
        return TsoCase(
            id=raw["id"], base_mva=float(raw["base_mva"]),
            horizon=int(raw["horizon"]), reference_bus=raw["reference_bus"],
            prices=_prices(raw["prices"]),
            theta_min=float(raw["theta_min"]), theta_max=float(raw["theta_max"]),
            buses=[TsoBus(b["id"], b["load"], float(b.get("shed_cap", 0.0)))
                   for b in raw["buses"]],
            lines=[TsoLine(l["from_bus"], l["to_bus"], float(l["susceptance"]),
                           float(l["flow_min"]), float(l["flow_max"]))
                   for l in raw["lines"]],
            thermal=[TsoGen(g["id"], g["bus"], g["cost"],
                            float(g.get("p_min", 0.0)), float(g["p_max"]),
                            float(g["ramp"]))
                     for g in raw["thermal"]],
            renewables=[Renewable(r["id"], r["bus"], r["forecast"])
                        for r in raw.get("renewables", [])],
            ties=[TieLine(t["id"], t["bus"], t["dso"],
                          float(t["p_min"]), float(t["p_max"]))
                  for t in raw.get("ties", [])],
        )
    except KeyError as exc:
        raise GridError(f"transmission case {path}: missing field {exc}") from exc


def load_dso_case(path: str | Path) -> DsoCase:
    raw = json.loads(Path(path).read_text())
    try:
        return DsoCase(
            id=raw["id"], base_mva=float(raw["base_mva"]),
            horizon=int(raw["horizon"]), interface_bus=raw["interface_bus"],
            prices=_prices(raw["prices"]), segments=int(raw["segments"]),
            theta_min=float(raw["theta_min"]), theta_max=float(raw["theta_max"]),
            v_sq_min=float(raw["v_sq_min"]), v_sq_max=float(raw["v_sq_max"]),
            buses=[DsoBus(b["id"], b["load_p"], b["load_q"],
                          float(b.get("shed_cap", 0.0)))
                   for b in raw["buses"]],
            lines=[DsoLine(l["from_bus"], l["to_bus"], float(l["conductance"]),
                           float(l["susceptance"]), float(l["s_cap"]))
                   for l in raw["lines"]],
            thermal=[DsoGen(g["id"], g["bus"], float(g["cost"]),
                            float(g["p_max"]), float(g["q_min"]),
                            float(g["q_max"]), float(g["ramp"]))
                     for g in raw["thermal"]],
            renewables=[Renewable(r["id"], r["bus"], r["forecast"])
                        for r in raw.get("renewables", [])],
        )
    except KeyError as exc:
        raise GridError(f"feeder case {path}: missing field {exc}") from exc


def load_grid_case(directory: str | Path) -> tuple[TsoCase, list[DsoCase]]:
    """Load tso.json plus every dso_*.json from a case directory."""
    directory = Path(directory)
    tso_path = directory / "tso.json"
    if not tso_path.exists():
        raise GridError(f"{directory}: no tso.json")
    tso = load_tso_case(tso_path)
    dsos = [load_dso_case(p) for p in sorted(directory.glob("dso_*.json"))]
    linked = {t.dso for t in tso.ties}
    for dso in dsos:
        if dso.id not in linked:
            raise GridError(f"feeder {dso.id} has no tie record in tso.json")
        if dso.horizon != tso.horizon:
            raise GridError(f"feeder {dso.id}: horizon differs from the "
                            "transmission case")
    return tso, dsos


# ---------------------------------------------------------------------------
# LP assembly
# ---------------------------------------------------------------------------


@dataclass
class DispatchLp(LinearProgram):
    """A dispatch LP with named columns and labelled rows.

    ``c`` follows the solver convention (maximize), so it holds the
    negated cost vector; ``min_cost`` gives the minimization view.
    """

    names: list[str] = field(default_factory=list)
    ub_labels: list[str] = field(default_factory=list)
    eq_labels: list[str] = field(default_factory=list)

    @property
    def min_cost(self) -> np.ndarray:
        return -self.c

    def col(self, name: str) -> int:
        return self.names.index(name)


class _Builder:
    def __init__(self):
        self.cols: dict[str, int] = {}
        self.cost: dict[int, float] = {}
        self.ub_rows: list[tuple[dict[int, float], float, str]] = []
        self.eq_rows: list[tuple[dict[int, float], float, str]] = []

    def var(self, name: str) -> int:
        if name not in self.cols:
            self.cols[name] = len(self.cols)
        return self.cols[name]

    def add_cost(self, name: str, coef: float) -> None:
        col = self.var(name)
        self.cost[col] = self.cost.get(col, 0.0) + coef

    def add_ub(self, coeffs: dict[str, float], rhs: float, label: str) -> None:
        self.ub_rows.append(({self.var(n): c for n, c in coeffs.items()},
                             float(rhs), label))

    def add_eq(self, coeffs: dict[str, float], rhs: float, label: str) -> None:
        self.eq_rows.append(({self.var(n): c for n, c in coeffs.items()},
                             float(rhs), label))

    def bound(self, name: str, lo: float | None, hi: float | None) -> None:
        if hi is not None:
            self.add_ub({name: 1.0}, hi, f"ub:{name}")
        if lo is not None:
            self.add_ub({name: -1.0}, -lo, f"lb:{name}")

    def build(self) -> DispatchLp:
        n = len(self.cols)
        c = np.zeros(n)
        for col, coef in self.cost.items():
            c[col] = -coef                      # stored as a maximization
        a_ub = np.zeros((len(self.ub_rows), n))
        b_ub = np.zeros(len(self.ub_rows))
        for i, (coeffs, rhs, _) in enumerate(self.ub_rows):
            for col, v in coeffs.items():
                a_ub[i, col] = v
            b_ub[i] = rhs
        a_eq = np.zeros((len(self.eq_rows), n))
        b_eq = np.zeros(len(self.eq_rows))
        for i, (coeffs, rhs, _) in enumerate(self.eq_rows):
            for col, v in coeffs.items():
                a_eq[i, col] = v
            b_eq[i] = rhs
        return DispatchLp(
            c=c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
            names=list(self.cols),
            ub_labels=[r[2] for r in self.ub_rows],
            eq_labels=[r[2] for r in self.eq_rows])


def _fill_tso(bld: _Builder, case: TsoCase) -> None:
    pr = case.prices
    horizon = range(case.horizon)
    for t in horizon:
        for g in case.thermal:
            name = f"tso.p:{g.id}:{t}"
            bld.bound(name, g.p_min, g.p_max)
            segs = g.segments()
            if len(segs) == 1 and segs[0][1] == 0.0:
                bld.add_cost(name, segs[0][0])
            else:
                w = f"tso.w:{g.id}:{t}"
                bld.add_cost(w, 1.0)
                for s_i, (slope, icept) in enumerate(segs):
                    bld.add_ub({name: slope, w: -1.0}, -icept,
                               f"cost-seg{s_i}:{g.id}:{t}")
        for r in case.renewables:
            name = f"tso.curt:{r.id}:{t}"
            bld.bound(name, 0.0, float(r.forecast[t]))
            bld.add_cost(name, pr.curtailment)
        for b in case.buses:
            if b.shed_cap > 0:
                name = f"tso.shed:{b.id}:{t}"
                bld.bound(name, 0.0, b.shed_cap)
                bld.add_cost(name, pr.load_shed)
        for b in case.buses:
            name = f"tso.theta:{b.id}:{t}"
            if b.id == case.reference_bus:
                bld.add_eq({name: 1.0}, 0.0, f"theta-ref:{t}")
            else:
                bld.bound(name, case.theta_min, case.theta_max)
        for ln in case.lines:
            name = f"tso.flow:{ln.key}:{t}"
            bld.bound(name, ln.flow_min, ln.flow_max)
            bld.add_eq({name: 1.0,
                        f"tso.theta:{ln.from_bus}:{t}": -ln.susceptance,
                        f"tso.theta:{ln.to_bus}:{t}": ln.susceptance},
                       0.0, f"dc-flow:{ln.key}:{t}")
        for tie in case.ties:
            name = f"tie:{tie.id}:{t}"
            bld.bound(name, tie.p_min, tie.p_max)
            bld.add_cost(name, pr.exchange)
        # bus balance: generation + renewable injection + shed
        #            = load + net outflow + tie export
        for b in case.buses:
            coeffs: dict[str, float] = {}
            rhs = float(b.load[t])
            for g in case.thermal:
                if g.bus == b.id:
                    coeffs[f"tso.p:{g.id}:{t}"] = 1.0
            for r in case.renewables:
                if r.bus == b.id:
                    coeffs[f"tso.curt:{r.id}:{t}"] = -1.0
                    rhs -= float(r.forecast[t])
            if b.shed_cap > 0:
                coeffs[f"tso.shed:{b.id}:{t}"] = 1.0
            for ln in case.lines:
                if ln.from_bus == b.id:
                    coeffs[f"tso.flow:{ln.key}:{t}"] = \
                        coeffs.get(f"tso.flow:{ln.key}:{t}", 0.0) - 1.0
                if ln.to_bus == b.id:
                    coeffs[f"tso.flow:{ln.key}:{t}"] = \
                        coeffs.get(f"tso.flow:{ln.key}:{t}", 0.0) + 1.0
            for tie in case.ties:
                if tie.bus == b.id:
                    coeffs[f"tie:{tie.id}:{t}"] = -1.0
            bld.add_eq(coeffs, rhs, f"balance:{b.id}:{t}")
    for t in range(1, case.horizon):
        for g in case.thermal:
            a, b_ = f"tso.p:{g.id}:{t}", f"tso.p:{g.id}:{t - 1}"
            bld.add_ub({a: 1.0, b_: -1.0}, g.ramp, f"ramp-up:{g.id}:{t}")
            bld.add_ub({a: -1.0, b_: 1.0}, g.ramp, f"ramp-dn:{g.id}:{t}")


def _fill_dso(bld: _Builder, case: DsoCase, tie_name, priced_exchange: bool,
              own_cost: bool = True) -> None:
    """Feeder rows over variables prefixed by the feeder id.

    ``tie_name(t)`` supplies the tie column (shared with the transmission
    block in the joint model); the tie enters the root balance as an
    import.  ``priced_exchange`` adds the c_ex term to the objective, which
    the joint model skips because its transmission block already pays it.
    """
    pid = case.id
    pr = case.prices
    for t in range(case.horizon):
        for g in case.thermal:
            bld.bound(f"{pid}.p:{g.id}:{t}", 0.0, g.p_max)
            bld.bound(f"{pid}.q:{g.id}:{t}", g.q_min, g.q_max)
            if own_cost:
                bld.add_cost(f"{pid}.p:{g.id}:{t}", g.cost)
        for r in case.renewables:
            name = f"{pid}.curt:{r.id}:{t}"
            bld.bound(name, 0.0, float(r.forecast[t]))
            if own_cost:
                bld.add_cost(name, pr.curtailment)
        for b in case.buses:
            if b.shed_cap > 0:
                name = f"{pid}.shed:{b.id}:{t}"
                bld.bound(name, 0.0, b.shed_cap)
                if own_cost:
                    bld.add_cost(name, pr.load_shed)
        for b in case.buses:
            v, th = f"{pid}.v:{b.id}:{t}", f"{pid}.theta:{b.id}:{t}"
            if b.id == case.interface_bus:
                bld.add_eq({v: 1.0}, 1.0, f"{pid}:v-root:{t}")
                bld.add_eq({th: 1.0}, 0.0, f"{pid}:theta-root:{t}")
            else:
                bld.bound(v, case.v_sq_min, case.v_sq_max)
                bld.bound(th, case.theta_min, case.theta_max)
        if priced_exchange:
            bld.add_cost(tie_name(t), pr.exchange)
        else:
            bld.var(tie_name(t))
        for ln in case.lines:
            fp, fq = f"{pid}.fp:{ln.key}:{t}", f"{pid}.fq:{ln.key}:{t}"
            vi, vj = f"{pid}.v:{ln.from_bus}:{t}", f"{pid}.v:{ln.to_bus}:{t}"
            ti = f"{pid}.theta:{ln.from_bus}:{t}"
            tj = f"{pid}.theta:{ln.to_bus}:{t}"
            g_, b_ = ln.conductance, ln.susceptance
            bld.add_eq({fp: 1.0, vi: -g_ / 2, vj: g_ / 2, ti: b_, tj: -b_},
                       0.0, f"{pid}:pflow:{ln.key}:{t}")
            bld.add_eq({fq: 1.0, vi: b_ / 2, vj: -b_ / 2, ti: g_, tj: -g_},
                       0.0, f"{pid}:qflow:{ln.key}:{t}")
            cone_rhs = ln.s_cap * math.cos(math.pi / case.segments)
            for k in range(1, case.segments + 1):
                ang = 2.0 * math.pi * k / case.segments
                bld.add_ub({fp: math.cos(ang), fq: math.sin(ang)}, cone_rhs,
                           f"{pid}:cone{k}:{ln.key}:{t}")
        for b in case.buses:
            pco: dict[str, float] = {}
            qco: dict[str, float] = {}
            prhs, qrhs = float(b.load_p[t]), float(b.load_q[t])
            for g in case.thermal:
                if g.bus == b.id:
                    pco[f"{pid}.p:{g.id}:{t}"] = 1.0
                    qco[f"{pid}.q:{g.id}:{t}"] = 1.0
            for r in case.renewables:
                if r.bus == b.id:
                    pco[f"{pid}.curt:{r.id}:{t}"] = -1.0
                    prhs -= float(r.forecast[t])
            if b.shed_cap > 0:
                pco[f"{pid}.shed:{b.id}:{t}"] = 1.0
            for ln in case.lines:
                if ln.from_bus == b.id:
                    pco[f"{pid}.fp:{ln.key}:{t}"] = \
                        pco.get(f"{pid}.fp:{ln.key}:{t}", 0.0) - 1.0
                    qco[f"{pid}.fq:{ln.key}:{t}"] = \
                        qco.get(f"{pid}.fq:{ln.key}:{t}", 0.0) - 1.0
                if ln.to_bus == b.id:
                    pco[f"{pid}.fp:{ln.key}:{t}"] = \
                        pco.get(f"{pid}.fp:{ln.key}:{t}", 0.0) + 1.0
                    qco[f"{pid}.fq:{ln.key}:{t}"] = \
                        qco.get(f"{pid}.fq:{ln.key}:{t}", 0.0) + 1.0
            if b.id == case.interface_bus:
                pco[tie_name(t)] = 1.0
            bld.add_eq(pco, prhs, f"{pid}:balance-p:{b.id}:{t}")
            bld.add_eq(qco, qrhs, f"{pid}:balance-q:{b.id}:{t}")
    for t in range(1, case.horizon):
        for g in case.thermal:
            a, b_ = f"{pid}.p:{g.id}:{t}", f"{pid}.p:{g.id}:{t - 1}"
            bld.add_ub({a: 1.0, b_: -1.0}, g.ramp, f"{pid}:ramp-up:{g.id}:{t}")
            bld.add_ub({a: -1.0, b_: 1.0}, g.ramp, f"{pid}:ramp-dn:{g.id}:{t}")


def build_tso_model(case: TsoCase) -> DispatchLp:
    """Transmission dispatch LP (DC flows, ramping, shed and curtailment)."""
    bld = _Builder()
    _fill_tso(bld, case)
    return bld.build()


def build_dso_model(case: DsoCase) -> DispatchLp:
    """Feeder dispatch LP (linearized DistFlow plus the segmented cone)."""
    bld = _Builder()
    _fill_dso(bld, case, lambda t: f"{case.id}.tie:{t}",
              priced_exchange=True)
    return bld.build()


def build_joint_model(tso: TsoCase, dsos: list[DsoCase]) -> DispatchLp:
    """One LP over both systems; tie columns are shared, priced once."""
    by_dso = {t.dso: t for t in tso.ties}
    bld = _Builder()
    _fill_tso(bld, tso)
    for dso in dsos:
        tie = by_dso.get(dso.id)
        if tie is None:
            raise GridError(f"feeder {dso.id} has no tie record")
        _fill_dso(bld, dso, lambda t, tid=tie.id: f"tie:{tid}:{t}",
                  priced_exchange=False)
    return bld.build()


# ---------------------------------------------------------------------------
# Epigraph reduction and projection
# ---------------------------------------------------------------------------


@dataclass
class DsoReduction:
    """Affine map rebuilding a feeder's internal variables after a solve.

    The feeder LP's equality rows pin most internal coordinates; writing
    y = y0 + yx x + n u with n spanning the remaining freedom turns the
    feeder polytope into inequalities over (x, u) only.  Lifting an x
    back means finding any feasible u and applying this map.
    """

    x_names: list[str]
    y_names: list[str]
    y0: np.ndarray
    yx: np.ndarray
    n: np.ndarray

    def rebuild(self, x: np.ndarray, u: np.ndarray) -> dict[str, float]:
        y = self.y0 + self.yx @ x
        if self.n.shape[1]:
            y = y + self.n @ u
        out = {name: float(v) for name, v in zip(self.x_names, x)}
        out.update({name: float(v) for name, v in zip(self.y_names, y)})
        return out


@dataclass
class DsoProjection:
    """Everything the coordinated solve needs from one feeder."""

    case: DsoCase
    phi1: HPolytope
    reduction: DsoReduction
    result: ProjectionResult


def _internal_cost_vector(dso_lp: DispatchLp, case: DsoCase) -> np.ndarray:
    """Cost coefficients net of the exchange term (the epigraph's subject)."""
    w = dso_lp.min_cost.copy()
    for t in range(case.horizon):
        w[dso_lp.col(f"{case.id}.tie:{t}")] = 0.0
    return w


def epigraph_reduce_full(dso_lp: DispatchLp, case: DsoCase,
                         tol: ToleranceConfig | None = None
                         ) -> tuple[HPolytope, DsoReduction]:
    """Feeder polytope over x = (tie schedule, internal-cost bound).

    Adds one row bounding the internal cost by the new variable and a cap
    on that variable at the worst feasible internal cost (one auxiliary
    LP), then eliminates the equality rows so the result is a pure
    inequality system over (x, u).
    """
    tol = tol or ToleranceConfig()
    w = _internal_cost_vector(dso_lp, case)
    cap_rep = solve_lp(LinearProgram(w, dso_lp.a_ub, dso_lp.b_ub,
                                     dso_lp.a_eq, dso_lp.b_eq), tol)
    if cap_rep.status != "optimal":
        raise GridError(
            f"internal-cost cap LP returned {cap_rep.status}; the feeder "
            "model is unbounded or infeasible")
    pi_cap = float(cap_rep.objective_value)

    n = len(dso_lp.names)
    x_cols = [dso_lp.col(f"{case.id}.tie:{t}") for t in range(case.horizon)]
    pi_col = n                       # appended
    a_ub = np.hstack([dso_lp.a_ub, np.zeros((len(dso_lp.b_ub), 1))])
    b_ub = dso_lp.b_ub.copy()
    epi = np.append(w, -1.0)
    cap_row = np.zeros(n + 1)
    cap_row[pi_col] = 1.0
    a_ub = np.vstack([a_ub, epi, cap_row])
    b_ub = np.concatenate([b_ub, [0.0, pi_cap]])
    a_eq = np.hstack([dso_lp.a_eq, np.zeros((len(dso_lp.b_eq), 1))])
    b_eq = dso_lp.b_eq

    x_all = x_cols + [pi_col]
    y_all = [j for j in range(n + 1) if j not in set(x_all)]
    e_x, e_y = a_eq[:, x_all], a_eq[:, y_all]
    y0, *_ = np.linalg.lstsq(e_y, b_eq, rcond=None)
    if len(b_eq) and np.abs(e_y @ y0 - b_eq).max() > 1e-7:
        raise InfeasibleCase("feeder equality rows are inconsistent")
    yx = np.linalg.lstsq(e_y, -e_x, rcond=None)[0] if len(b_eq) else \
        np.zeros((len(y_all), len(x_all)))
    if len(b_eq) and np.abs(e_y @ yx + e_x).max() > 1e-7:
        raise GridError("equality rows pin the tie schedule directly; "
                        "the feeder region would not be full-dimensional")
    if len(b_eq):
        _, sv, vt = np.linalg.svd(e_y)
        rank = int((sv > tol.rank_tol * (sv[0] if len(sv) else 1.0)).sum())
        nbasis = vt[rank:].T
    else:
        nbasis = np.eye(len(y_all))

    a_x = a_ub[:, x_all] + a_ub[:, y_all] @ yx
    a_u = a_ub[:, y_all] @ nbasis
    rhs = b_ub - a_ub[:, y_all] @ y0
    # matrix products above leave ~1e-15 dust where coefficients are truly
    # zero; snap it out so rows that do not touch the fiber have an exactly
    # zero fiber block downstream
    row_mag = np.maximum(1.0, np.abs(np.hstack([a_x, a_u, rhs[:, None]]))
                         .max(axis=1))
    a_x[np.abs(a_x) < 1e-10 * row_mag[:, None]] = 0.0
    a_u[np.abs(a_u) < 1e-10 * row_mag[:, None]] = 0.0
    scale = np.maximum(1.0, np.abs(rhs))
    norms = np.linalg.norm(np.hstack([a_x, a_u]), axis=1)
    live = norms > 1e-11 * scale
    dead_bad = ~live & (rhs < -tol.feas_tol)
    if dead_bad.any():
        raise InfeasibleCase(
            "feeder rows reduce to impossible constants",
            [(dso_lp.ub_labels[i], float(rhs[i]))
             for i in np.nonzero(dead_bad)[0] if i < len(dso_lp.ub_labels)])
    names = dso_lp.names + [f"{case.id}.pi"]
    red = DsoReduction(
        x_names=[names[j] for j in x_all],
        y_names=[names[j] for j in y_all],
        y0=y0, yx=yx, n=nbasis)
    return HPolytope(a_x[live], a_u[live], rhs[live]), red


def epigraph_reduce(dso_lp: DispatchLp, case: DsoCase,
                    tol: ToleranceConfig | None = None) -> HPolytope:
    return epigraph_reduce_full(dso_lp, case, tol)[0]


def dso_equivalent_projection(phi1: HPolytope, cfg: EspConfig | None = None,
                              tol: ToleranceConfig | None = None,
                              tag: str | None = None) -> ProjectionResult:
    """Facets of the feeder region over (tie schedule, cost bound)."""
    result = esp_project(phi1, cfg, tol)
    result.tag = tag
    return result


def project_dso(case: DsoCase, cfg: EspConfig | None = None,
                tol: ToleranceConfig | None = None) -> DsoProjection:
    """Build, reduce, and project one feeder; bundle what the solves need."""
    lp = build_dso_model(case)
    phi1, red = epigraph_reduce_full(lp, case, tol)
    result = dso_equivalent_projection(phi1, cfg, tol, tag=case.id)
    return DsoProjection(case=case, phi1=phi1, reduction=red, result=result)


# ---------------------------------------------------------------------------
# Solution container
# ---------------------------------------------------------------------------


@dataclass
class DispatchSolution:
    scheme: str
    horizon: int
    costs: dict[str, float]
    ties: dict[str, list[float]]
    tso: dict[str, dict[str, list[float]]]
    dsos: dict[str, dict]
    pi_e: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "horizon": self.horizon,
            "costs": self.costs,
            "ties": self.ties,
            "tso": self.tso,
            "dsos": self.dsos,
            "pi_e": self.pi_e,
        }


def _series(names: list[str], z: np.ndarray, prefix: str,
            horizon: int) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for name, val in zip(names, z):
        if not name.startswith(prefix):
            continue
        _, ident, t = name.split(":")
        out.setdefault(ident, [0.0] * horizon)[int(t)] = float(val)
    return out


def _value_map(names: list[str], z: np.ndarray) -> dict[str, float]:
    return {name: float(v) for name, v in zip(names, z)}


def _tso_blocks(names, z, case: TsoCase) -> dict[str, dict[str, list[float]]]:
    t = case.horizon
    return {
        "gen": _series(names, z, "tso.p:", t),
        "shed": _series(names, z, "tso.shed:", t),
        "curtail": _series(names, z, "tso.curt:", t),
        "theta": _series(names, z, "tso.theta:", t),
        "flow": _series(names, z, "tso.flow:", t),
    }


def _dso_blocks(values: dict[str, float], case: DsoCase,
                tie: list[float]) -> dict:
    t = case.horizon
    names = list(values)
    z = np.array([values[n] for n in names])
    pid = case.id
    return {
        "gen_p": _series(names, z, f"{pid}.p:", t),
        "gen_q": _series(names, z, f"{pid}.q:", t),
        "shed": _series(names, z, f"{pid}.shed:", t),
        "curtail": _series(names, z, f"{pid}.curt:", t),
        "v": _series(names, z, f"{pid}.v:", t),
        "theta": _series(names, z, f"{pid}.theta:", t),
        "flow_p": _series(names, z, f"{pid}.fp:", t),
        "flow_q": _series(names, z, f"{pid}.fq:", t),
        "tie": list(tie),
    }


def _cost_breakdown(tso: TsoCase, tso_blocks, dsos: list[DsoCase],
                    dso_blocks: dict[str, dict],
                    ties: dict[str, list[float]]) -> dict[str, float]:
    """Table-style cost buckets; the exchange term lands in the feeder
    bucket and is counted exactly once."""
    by_dso = {t.dso: t.id for t in tso.ties}
    tso_cost = 0.0
    for g in tso.thermal:
        series = tso_blocks["gen"].get(g.id, [0.0] * tso.horizon)
        tso_cost += sum(g.cost_of(p) for p in series)
    pr = tso.prices
    tso_pen = pr.load_shed * sum(sum(v) for v in tso_blocks["shed"].values())
    tso_pen += pr.curtailment * sum(
        sum(v) for v in tso_blocks["curtail"].values())
    dso_cost = 0.0
    dso_pen = 0.0
    for case in dsos:
        blocks = dso_blocks[case.id]
        for g in case.thermal:
            series = blocks["gen_p"].get(g.id, [0.0] * case.horizon)
            dso_cost += g.cost * sum(series)
        dso_cost += case.prices.exchange * sum(ties[by_dso[case.id]])
        dso_pen += case.prices.load_shed * sum(
            sum(v) for v in blocks["shed"].values())
        dso_pen += case.prices.curtailment * sum(
            sum(v) for v in blocks["curtail"].values())
    total = tso_cost + tso_pen + dso_cost + dso_pen
    return {
        "tso_cost": tso_cost,
        "tso_curtail_penalty": tso_pen,
        "dso_cost": dso_cost,
        "dso_curtail_penalty": dso_pen,
        "total": total,
    }


def _internal_cost(case: DsoCase, blocks: dict) -> float:
    out = 0.0
    for g in case.thermal:
        out += g.cost * sum(blocks["gen_p"].get(g.id, [0.0]))
    out += case.prices.load_shed * sum(sum(v) for v in blocks["shed"].values())
    out += case.prices.curtailment * sum(
        sum(v) for v in blocks["curtail"].values())
    return out


# ---------------------------------------------------------------------------
# Elastic infeasibility report
# ---------------------------------------------------------------------------


def _elastic_report(lp: DispatchLp,
                    tol: ToleranceConfig) -> list[tuple[str, float]]:
    """Rows that cannot hold together: minimal total violation witness."""
    n = lp.c.size
    m_ub, m_eq = len(lp.b_ub), len(lp.b_eq)
    n_s = m_ub + 2 * m_eq
    a_ub = np.hstack([lp.a_ub, -np.eye(m_ub), np.zeros((m_ub, 2 * m_eq))])
    nonneg = np.hstack([np.zeros((n_s, n)), -np.eye(n_s)])
    a_ub = np.vstack([a_ub, nonneg])
    b_ub = np.concatenate([lp.b_ub, np.zeros(n_s)])
    a_eq = np.hstack([lp.a_eq, np.zeros((m_eq, m_ub)),
                      np.eye(m_eq), -np.eye(m_eq)])
    c = np.concatenate([np.zeros(n), -np.ones(n_s)])
    rep = solve_lp(LinearProgram(c, a_ub, b_ub, a_eq, lp.b_eq), tol)
    if rep.status != "optimal":
        return [("elastic relaxation failed", float("nan"))]
    s = rep.z_star[n:]
    out = []
    for i in range(m_ub):
        if s[i] > 1e-6:
            out.append((lp.ub_labels[i], float(s[i])))
    for i in range(m_eq):
        v = s[m_ub + i] + s[m_ub + m_eq + i]
        if v > 1e-6:
            out.append((lp.eq_labels[i], float(v)))
    out.sort(key=lambda kv: -kv[1])
    return out


def _solve_or_report(lp: DispatchLp, tol: ToleranceConfig, what: str):
    rep = solve_lp(lp, tol)
    if rep.status == "optimal":
        return rep
    if rep.status == "infeasible":
        raise InfeasibleCase(f"{what} is infeasible", _elastic_report(lp, tol))
    raise GridError(f"{what} LP returned {rep.status}")


# ---------------------------------------------------------------------------
# The three schemes
# ---------------------------------------------------------------------------


def solve_joint(tso: TsoCase, dsos: list[DsoCase],
                tol: ToleranceConfig | None = None) -> DispatchSolution:
    """Monolithic reference solve of both systems."""
    tol = tol or ToleranceConfig()
    lp = build_joint_model(tso, dsos)
    rep = _solve_or_report(lp, tol, "joint dispatch")
    values = _value_map(lp.names, rep.z_star)
    ties = _series(lp.names, rep.z_star, "tie:", tso.horizon)
    for tie in tso.ties:
        ties.setdefault(tie.id, [0.0] * tso.horizon)
    tso_blocks = _tso_blocks(lp.names, rep.z_star, tso)
    by_dso = {t.dso: t.id for t in tso.ties}
    dso_blocks = {d.id: _dso_blocks(values, d, ties[by_dso[d.id]])
                  for d in dsos}
    costs = _cost_breakdown(tso, tso_blocks, dsos, dso_blocks, ties)
    pi_e = {d.id: _internal_cost(d, dso_blocks[d.id]) for d in dsos}
    return DispatchSolution(
        scheme="joint", horizon=tso.horizon, costs=costs, ties=ties,
        tso=tso_blocks, dsos=dso_blocks, pi_e=pi_e)


def solve_coordinated(tso: TsoCase, projections: list[DsoProjection],
                      tol: ToleranceConfig | None = None) -> DispatchSolution:
    """Transmission solve against each feeder's projected region, then a
    lift back through each feeder's full polytope.

    A failed lift means the projection disagrees with the region it came
    from and is raised as an inconsistency, never papered over.
    """
    tol = tol or ToleranceConfig()
    by_dso = {t.dso: t for t in tso.ties}
    bld = _Builder()
    _fill_tso(bld, tso)
    for proj in projections:
        case = proj.case
        tie = by_dso.get(case.id)
        if tie is None:
            raise GridError(f"feeder {case.id} has no tie record")
        x_names = [f"tie:{tie.id}:{t}" for t in range(tso.horizon)]
        x_names.append(f"{case.id}.pi")
        bld.add_cost(f"{case.id}.pi", 1.0)
        res = proj.result
        for i, (row, rhs) in enumerate(zip(res.G, res.g)):
            coeffs = {nm: float(v) for nm, v in zip(x_names, row)
                      if abs(v) > 0.0}
            bld.add_ub(coeffs, float(rhs), f"{case.id}:region{i}")
    lp = bld.build()
    rep = _solve_or_report(lp, tol, "coordinated dispatch")
    values = _value_map(lp.names, rep.z_star)
    ties = _series(lp.names, rep.z_star, "tie:", tso.horizon)
    for tie in tso.ties:
        ties.setdefault(tie.id, [0.0] * tso.horizon)
    tso_blocks = _tso_blocks(lp.names, rep.z_star, tso)

    dso_blocks: dict[str, dict] = {}
    pi_e: dict[str, float] = {}
    for proj in projections:
        case = proj.case
        tie = by_dso[case.id]
        x = np.array([values[f"tie:{tie.id}:{t}"]
                      for t in range(tso.horizon)] +
                     [values[f"{case.id}.pi"]])
        u = lift_point(proj.phi1, x, tol)
        if u is None:
            raise GridError(
                f"feeder {case.id}: optimum does not lift back into the "
                "full region; projection and source disagree")
        full = proj.reduction.rebuild(x, u)
        dso_blocks[case.id] = _dso_blocks(full, case, x[:-1].tolist())
        pi_e[case.id] = float(x[-1])
    costs = _cost_breakdown(tso, tso_blocks,
                            [p.case for p in projections], dso_blocks, ties)
    return DispatchSolution(
        scheme="coordinated", horizon=tso.horizon, costs=costs, ties=ties,
        tso=tso_blocks, dsos=dso_blocks, pi_e=pi_e)


def solve_independent(tso: TsoCase, dsos: list[DsoCase],
                      tol: ToleranceConfig | None = None) -> DispatchSolution:
    """Feeders self-schedule against the exchange price; the transmission
    side then runs with every tie frozen at the feeder's choice."""
    tol = tol or ToleranceConfig()
    by_dso = {t.dso: t for t in tso.ties}
    dso_blocks: dict[str, dict] = {}
    tie_fixed: dict[str, list[float]] = {}
    pi_e: dict[str, float] = {}
    for case in dsos:
        tie = by_dso.get(case.id)
        if tie is None:
            raise GridError(f"feeder {case.id} has no tie record")
        bld = _Builder()
        _fill_dso(bld, case, lambda t: f"{case.id}.tie:{t}",
                  priced_exchange=True)
        for t in range(case.horizon):
            bld.bound(f"{case.id}.tie:{t}", tie.p_min, tie.p_max)
        lp = bld.build()
        rep = _solve_or_report(lp, tol, f"feeder {case.id} self-schedule")
        values = _value_map(lp.names, rep.z_star)
        sched = [values[f"{case.id}.tie:{t}"] for t in range(case.horizon)]
        tie_fixed[tie.id] = sched
        dso_blocks[case.id] = _dso_blocks(values, case, sched)
        pi_e[case.id] = _internal_cost(case, dso_blocks[case.id])

    bld = _Builder()
    _fill_tso(bld, tso)
    for tie_id, sched in tie_fixed.items():
        for t, val in enumerate(sched):
            bld.add_eq({f"tie:{tie_id}:{t}": 1.0}, val,
                       f"tie-fixed:{tie_id}:{t}")
    lp = bld.build()
    rep = _solve_or_report(lp, tol, "transmission dispatch under fixed ties")
    ties = _series(lp.names, rep.z_star, "tie:", tso.horizon)
    for tie in tso.ties:
        ties.setdefault(tie.id, [0.0] * tso.horizon)
    tso_blocks = _tso_blocks(lp.names, rep.z_star, tso)
    costs = _cost_breakdown(tso, tso_blocks, dsos, dso_blocks, ties)
    return DispatchSolution(
        scheme="independent", horizon=tso.horizon, costs=costs, ties=ties,
        tso=tso_blocks, dsos=dso_blocks, pi_e=pi_e)


# ---------------------------------------------------------------------------
# Post-solve verification
# ---------------------------------------------------------------------------


def verify_dispatch(tso: TsoCase, dsos: list[DsoCase],
                    sol: DispatchSolution) -> dict[str, float]:
    """Worst violation per constraint family, straight from case data."""
    by_dso = {t.dso: t.id for t in tso.ties}
    res: dict[str, float] = {}

    worst_bal = 0.0
    worst_dc = 0.0
    for t in range(tso.horizon):
        for b in tso.buses:
            acc = -float(b.load[t])
            for g in tso.thermal:
                if g.bus == b.id:
                    acc += sol.tso["gen"][g.id][t]
            for r in tso.renewables:
                if r.bus == b.id:
                    acc += float(r.forecast[t])
                    acc -= sol.tso["curtail"].get(r.id, [0.0] * tso.horizon)[t]
            acc += sol.tso["shed"].get(b.id, [0.0] * tso.horizon)[t]
            for ln in tso.lines:
                if ln.from_bus == b.id:
                    acc -= sol.tso["flow"][ln.key][t]
                if ln.to_bus == b.id:
                    acc += sol.tso["flow"][ln.key][t]
            for tie in tso.ties:
                if tie.bus == b.id:
                    acc -= sol.ties[tie.id][t]
            worst_bal = max(worst_bal, abs(acc))
        for ln in tso.lines:
            lhs = sol.tso["flow"][ln.key][t]
            rhs = ln.susceptance * (sol.tso["theta"][ln.from_bus][t]
                                    - sol.tso["theta"][ln.to_bus][t])
            worst_dc = max(worst_dc, abs(lhs - rhs))
    res["tso_balance"] = worst_bal
    res["tso_dc_flow"] = worst_dc

    worst_p = 0.0
    worst_q = 0.0
    worst_cone = -math.inf
    worst_flow = 0.0
    for case in dsos:
        blocks = sol.dsos[case.id]
        tie_sched = sol.ties[by_dso[case.id]]
        for t in range(case.horizon):
            for b in case.buses:
                acc_p = -float(b.load_p[t])
                acc_q = -float(b.load_q[t])
                for g in case.thermal:
                    if g.bus == b.id:
                        acc_p += blocks["gen_p"][g.id][t]
                        acc_q += blocks["gen_q"][g.id][t]
                for r in case.renewables:
                    if r.bus == b.id:
                        acc_p += float(r.forecast[t])
                        acc_p -= blocks["curtail"].get(
                            r.id, [0.0] * case.horizon)[t]
                acc_p += blocks["shed"].get(b.id, [0.0] * case.horizon)[t]
                for ln in case.lines:
                    if ln.from_bus == b.id:
                        acc_p -= blocks["flow_p"][ln.key][t]
                        acc_q -= blocks["flow_q"][ln.key][t]
                    if ln.to_bus == b.id:
                        acc_p += blocks["flow_p"][ln.key][t]
                        acc_q += blocks["flow_q"][ln.key][t]
                if b.id == case.interface_bus:
                    acc_p += tie_sched[t]
                worst_p = max(worst_p, abs(acc_p))
                worst_q = max(worst_q, abs(acc_q))
            for ln in case.lines:
                fp = blocks["flow_p"][ln.key][t]
                fq = blocks["flow_q"][ln.key][t]
                dv = blocks["v"][ln.from_bus][t] - blocks["v"][ln.to_bus][t]
                dth = (blocks["theta"][ln.from_bus][t]
                       - blocks["theta"][ln.to_bus][t])
                worst_flow = max(
                    worst_flow,
                    abs(fp - (ln.conductance * dv / 2
                              - ln.susceptance * dth)),
                    abs(fq - (-ln.susceptance * dv / 2
                              - ln.conductance * dth)))
                cone_rhs = ln.s_cap * math.cos(math.pi / case.segments)
                for k in range(1, case.segments + 1):
                    ang = 2.0 * math.pi * k / case.segments
                    margin = (fp * math.cos(ang) + fq * math.sin(ang)
                              - cone_rhs)
                    worst_cone = max(worst_cone, margin)
    res["dso_balance_p"] = worst_p
    res["dso_balance_q"] = worst_q
    res["dso_flow_model"] = worst_flow
    res["dso_cone_margin"] = worst_cone if dsos else 0.0
    return res
