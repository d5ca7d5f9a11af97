"""Translate scenarios (or re-planning windows) into standard-form MIQPs.

The emitted problem is

    minimize    0.5 * x'Qx + c'x         (Q positive semidefinite)
    subject to  A_eq x  = b_eq
                A_ub x <= b_ub
                lb <= x <= ub,           some columns binary in {0, 1}

with a variable directory mapping every column to its role.  Column roles:

    x_c / x_d        charge / discharge rate of a session in a period
    x_c_prev/x_d_prev  pinned rate of the period before a re-planning window
    soc              state of charge of a session at a time boundary
    g / omega        grid supply / wind curtailment in a period
    y_c / y_d        exclusivity binaries of a bidirectional session
    z                full-speed fallback binary of a session

Single-variable constraints (rate bounds, SOC capacity and minimum levels,
full-speed forcing, the transformer cap on grid supply) are carried as
variable bounds; genuinely multi-variable constraints become rows.
Constraint and variable ordering is deterministic: sessions in scenario
order, periods ascending, then the grid/curtailment columns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .domain import (
    KWH_TOL,
    EvSession,
    MinimumUnreachableError,
    Scenario,
    Schedule,
    TimeGrid,
    assemble_schedule,
    max_energy_per_period,
    t_min,
)

logger = logging.getLogger(__name__)

#: variable directory entry: (role, session_id, period_or_time); the last
#: slot is -1 where no period applies (z columns) and the session id is ""
#: for the grid-level columns.
VarKey = tuple[str, str, int]

#: row directory entry, same shape as VarKey.
RowKey = tuple[str, str, int]


class BuildError(ValueError):
    """The scenario cannot be translated into a well-posed problem."""


@dataclass(frozen=True)
class MiqpProblem:
    """Standard-form convex MIQP with a column directory."""

    q: sp.csr_matrix
    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary_cols: np.ndarray
    variables: tuple[VarKey, ...]
    eq_labels: tuple[RowKey, ...]
    ub_labels: tuple[RowKey, ...]
    objective_offset: float = 0.0
    feasible_hint: np.ndarray | None = None
    min_soc_waived: frozenset[str] = frozenset()

    @property
    def n_variables(self) -> int:
        return self.c.shape[0]

    @property
    def n_binaries(self) -> int:
        return int(self.binary_cols.shape[0])

    def objective_value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.q @ x) + self.c @ x + self.objective_offset)

    def column(self, key: VarKey) -> int:
        return self.variables.index(key)


@dataclass(frozen=True)
class ModelStats:
    """Problem dimensions, for logging and sanity checks."""

    n_variables: int
    n_binaries: int
    n_eq_rows: int
    n_ub_rows: int
    n_nonzeros: int

    @classmethod
    def from_problem(cls, problem: MiqpProblem) -> "ModelStats":
        return cls(
            n_variables=problem.n_variables,
            n_binaries=problem.n_binaries,
            n_eq_rows=problem.a_eq.shape[0],
            n_ub_rows=problem.a_ub.shape[0],
            n_nonzeros=int(problem.q.nnz + problem.a_eq.nnz + problem.a_ub.nnz),
        )


@dataclass(frozen=True)
class WindowEntry:
    """State of one active session at a re-planning time."""

    session: EvSession
    soc_now_kwh: float
    last_rate_c: float = 0.0
    last_rate_d: float = 0.0


class _Assembler:
    """Accumulates columns, quadratic terms and rows, then freezes arrays."""

    def __init__(self) -> None:
        self.keys: list[VarKey] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self.binary: list[int] = []
        self.q_i: list[int] = []
        self.q_j: list[int] = []
        self.q_v: list[float] = []
        self.eq_rows: list[tuple[RowKey, list[tuple[int, float]], float]] = []
        self.ub_rows: list[tuple[RowKey, list[tuple[int, float]], float]] = []

    def add_var(self, key: VarKey, lb: float, ub: float,
                cost: float = 0.0, binary: bool = False) -> int:
        idx = len(self.keys)
        self.keys.append(key)
        self.lb.append(lb)
        self.ub.append(ub)
        self.cost.append(cost)
        if binary:
            self.binary.append(idx)
        return idx

    def add_square(self, idx: int, weight: float) -> None:
        """Add ``weight * x_idx**2`` to the objective."""
        if weight != 0.0:
            self.q_i.append(idx)
            self.q_j.append(idx)
            self.q_v.append(2.0 * weight)

    def add_cross(self, i: int, j: int, weight: float) -> None:
        """Add ``weight * x_i * x_j`` (i != j) to the objective."""
        if weight != 0.0:
            self.q_i.extend((i, j))
            self.q_j.extend((j, i))
            self.q_v.extend((weight, weight))

    def add_ramp_chain(self, cols: list[int], energy: float, alpha: float,
                       beta: float, lam: float, prev_col: int | None) -> None:
        """Degradation terms for one rate chain.

        Adds ``lam * (alpha * (e*(x_t - x_{t-1}))**2 + beta * (e*x_t)**2)``
        for every column in ``cols``; the rate before the first column is
        ``prev_col`` when given and the constant 0 otherwise.
        """
        if lam == 0.0 or energy == 0.0:
            return
        w_ramp = lam * alpha * energy * energy
        w_energy = lam * beta * energy * energy
        for pos, idx in enumerate(cols):
            self.add_square(idx, w_energy + w_ramp)
            before = prev_col if pos == 0 else cols[pos - 1]
            if before is not None:
                self.add_square(before, w_ramp)
                self.add_cross(idx, before, -2.0 * w_ramp)

    def add_eq(self, label: RowKey, coeffs: list[tuple[int, float]], rhs: float) -> None:
        self.eq_rows.append((label, coeffs, rhs))

    def add_ub(self, label: RowKey, coeffs: list[tuple[int, float]], rhs: float) -> None:
        self.ub_rows.append((label, coeffs, rhs))

    def build(self, offset: float = 0.0,
              feasible_hint: np.ndarray | None = None,
              min_soc_waived: frozenset[str] = frozenset()) -> MiqpProblem:
        n = len(self.keys)
        q = sp.coo_matrix((self.q_v, (self.q_i, self.q_j)), shape=(n, n)).tocsr()
        q.sum_duplicates()

        def rows_to_csr(rows):
            data, ri, ci, rhs, labels = [], [], [], [], []
            for r, (label, coeffs, b) in enumerate(rows):
                labels.append(label)
                rhs.append(b)
                for col, val in coeffs:
                    ri.append(r)
                    ci.append(col)
                    data.append(val)
            mat = sp.coo_matrix((data, (ri, ci)), shape=(len(rows), n)).tocsr()
            return mat, np.array(rhs, dtype=float), tuple(labels)

        a_eq, b_eq, eq_labels = rows_to_csr(self.eq_rows)
        a_ub, b_ub, ub_labels = rows_to_csr(self.ub_rows)
        problem = MiqpProblem(
            q=q,
            c=np.array(self.cost, dtype=float),
            a_eq=a_eq, b_eq=b_eq,
            a_ub=a_ub, b_ub=b_ub,
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            binary_cols=np.array(sorted(self.binary), dtype=int),
            variables=tuple(self.keys),
            eq_labels=eq_labels,
            ub_labels=ub_labels,
            objective_offset=offset,
            feasible_hint=feasible_hint,
            min_soc_waived=min_soc_waived,
        )
        return problem


@dataclass
class _SessionPlan:
    """Per-session layout decisions shared by both builders."""

    session: EvSession
    start: int                 # first period the builder may schedule
    soc_start: float           # SOC at ``start``
    p: float                   # max energy per period (kWh)
    forced_end: int            # x_c forced to 1 for periods [start, forced_end)
    min_from: int | None       # SOC >= min applies from this time on (None: waived)
    reach_rhs: float           # slack of the full-speed reachability test
    last_rate_c: float = 0.0
    last_rate_d: float = 0.0
    cols_x_c: dict[int, int] = field(default_factory=dict)
    cols_x_d: dict[int, int] = field(default_factory=dict)
    cols_soc: dict[int, int] = field(default_factory=dict)
    cols_y_c: dict[int, int] = field(default_factory=dict)
    cols_y_d: dict[int, int] = field(default_factory=dict)
    col_z: int = -1
    col_prev_c: int | None = None
    col_prev_d: int | None = None


def _plan_session(session: EvSession, grid: TimeGrid, start: int,
                  soc_start: float, waived: set[str]) -> _SessionPlan:
    """Resolve forcing windows and the minimum-level layout for one session."""
    p = max_energy_per_period(session.spec, grid)
    e_c = session.spec.eta_c * p
    remaining = session.t_dep - start
    view = EvSession(
        id=session.id, spec=session.spec, t_arr=start, t_dep=session.t_dep,
        soc_init_kwh=soc_start, soc_desired_kwh=session.soc_desired_kwh,
        soc_min_kwh=session.soc_min_kwh, mode=session.mode)
    forced_end = start
    min_from: int | None = start
    if soc_start < session.soc_min_kwh - KWH_TOL:
        try:
            periods = t_min(view, grid)
            forced_end = start + periods
            min_from = start + periods
        except MinimumUnreachableError:
            # unreachable minimum level: charge at full speed for the whole
            # remaining window and waive the minimum-SOC constraint
            logger.warning(
                "session %s cannot reach its minimum level before departure; "
                "charging at full speed and waiving the minimum-SOC bound",
                session.id)
            waived.add(session.id)
            forced_end = session.t_dep
            min_from = None
    reach_rhs = soc_start + e_c * remaining - session.soc_desired_kwh
    return _SessionPlan(session=session, start=start, soc_start=soc_start,
                        p=p, forced_end=forced_end, min_from=min_from,
                        reach_rhs=reach_rhs)


def _emit_session(asm: _Assembler, plan: _SessionPlan, lam: float,
                  alpha: float, beta: float) -> None:
    """Emit the columns, rows, and quadratic terms of one session."""
    s = plan.session
    sid = s.id
    start, dep = plan.start, s.t_dep
    p = plan.p
    e_c = s.spec.eta_c * p
    e_d = p / s.spec.eta_d
    cap = s.spec.battery_capacity_kwh
    big_m = cap

    for t in range(start, dep):
        lb = 1.0 if t < plan.forced_end else 0.0
        plan.cols_x_c[t] = asm.add_var(("x_c", sid, t), lb, 1.0)
    if s.is_v2g:
        for t in range(start, dep):
            plan.cols_x_d[t] = asm.add_var(("x_d", sid, t), 0.0, 1.0)
    for t in range(start, dep + 1):
        lo = 0.0
        if plan.min_from is not None and t >= plan.min_from:
            lo = s.soc_min_kwh
        plan.cols_soc[t] = asm.add_var(("soc", sid, t), lo, cap)
    if s.is_v2g:
        for t in range(start, dep):
            plan.cols_y_c[t] = asm.add_var(("y_c", sid, t), 0.0, 1.0, binary=True)
        for t in range(start, dep):
            plan.cols_y_d[t] = asm.add_var(("y_d", sid, t), 0.0, 1.0, binary=True)
    plan.col_z = asm.add_var(("z", sid, -1), 0.0, 1.0, binary=True)

    # SOC recursion: initialization plus one linear update row per period
    asm.add_eq(("soc_init", sid, start), [(plan.cols_soc[start], 1.0)], plan.soc_start)
    for t in range(start + 1, dep + 1):
        coeffs = [(plan.cols_soc[t], 1.0), (plan.cols_soc[t - 1], -1.0),
                  (plan.cols_x_c[t - 1], -e_c)]
        if s.is_v2g:
            coeffs.append((plan.cols_x_d[t - 1], e_d))
        asm.add_eq(("soc_step", sid, t), coeffs, 0.0)

    # full-speed fallback: if the desired level is unreachable even at full
    # speed, z flips to 1, which forces x_c to 1 and releases the final-SOC
    # requirement (big-M = battery capacity is always sufficient)
    asm.add_ub(("reach", sid, -1), [(plan.col_z, -big_m)], plan.reach_rhs)
    for t in range(start, dep):
        asm.add_ub(("xc_ge_z", sid, t),
                   [(plan.col_z, 1.0), (plan.cols_x_c[t], -1.0)], 0.0)
    asm.add_ub(("desired", sid, -1),
               [(plan.cols_soc[dep], -1.0), (plan.col_z, -big_m)],
               -s.soc_desired_kwh)

    if s.is_v2g:
        # per period: charge, discharge, or do nothing
        for t in range(start, dep):
            asm.add_ub(("excl_c", sid, t),
                       [(plan.cols_x_c[t], 1.0), (plan.cols_y_c[t], 1.0)], 1.0)
            asm.add_ub(("excl_d", sid, t),
                       [(plan.cols_x_d[t], 1.0), (plan.cols_y_d[t], 1.0)], 1.0)
            asm.add_eq(("y_sum", sid, t),
                       [(plan.cols_y_c[t], 1.0), (plan.cols_y_d[t], 1.0)], 1.0)

    asm.add_ramp_chain([plan.cols_x_c[t] for t in range(start, dep)],
                       e_c, alpha, beta, lam, plan.col_prev_c)
    if s.is_v2g:
        asm.add_ramp_chain([plan.cols_x_d[t] for t in range(start, dep)],
                           e_d, alpha, beta, lam, plan.col_prev_d)


def _emit_grid(asm: _Assembler, scenario: Scenario, periods: range,
               wind: np.ndarray, future_demand: np.ndarray | None,
               plans: list[_SessionPlan]) -> tuple[dict[int, int], dict[int, int]]:
    """Grid-supply and curtailment columns plus their defining rows."""
    fd = np.zeros(len(periods)) if future_demand is None else np.asarray(future_demand, float)
    price = scenario.price_cents_per_kwh
    discharge_cap = np.zeros(len(periods))
    for plan in plans:
        if plan.session.is_v2g:
            lo = max(plan.start, periods.start)
            for t in range(lo, plan.session.t_dep):
                discharge_cap[t - periods.start] += plan.p
    g_cols: dict[int, int] = {}
    w_cols: dict[int, int] = {}
    for m, t in enumerate(periods):
        g_cols[t] = asm.add_var(("g", "", t), 0.0, scenario.p_g_max_kwh,
                                cost=float(price[t]))
        # the upper bound is the largest value the defining row can force,
        # which keeps the column bounded even when its weight is zero
        w_cols[t] = asm.add_var(("omega", "", t), 0.0,
                                float(wind[m] + discharge_cap[m]),
                                cost=float(scenario.delta * price[t]))
    for m, t in enumerate(periods):
        g_coeffs = [(g_cols[t], -1.0)]
        w_coeffs = [(w_cols[t], -1.0)]
        for plan in plans:
            if plan.start <= t < plan.session.t_dep:
                g_coeffs.append((plan.cols_x_c[t], plan.p))
                w_coeffs.append((plan.cols_x_c[t], -plan.p))
                if plan.session.is_v2g:
                    g_coeffs.append((plan.cols_x_d[t], -plan.p))
                    w_coeffs.append((plan.cols_x_d[t], plan.p))
        asm.add_ub(("grid", "", t), g_coeffs, float(wind[m] - fd[m]))
        asm.add_ub(("curtail", "", t), w_coeffs, float(-wind[m] + fd[m]))
    return g_cols, w_cols


def _feasible_hint(asm: _Assembler, plans: list[_SessionPlan],
                   scenario: Scenario, periods: range, wind: np.ndarray,
                   g_cols: dict[int, int], w_cols: dict[int, int]) -> np.ndarray | None:
    """Greedy feasible point used to start the QP without a phase-1 solve.

    Each session charges its mandatory full-speed prefix, then fills the
    remaining need for the desired level in the cheapest periods first
    (wind-covered periods before grid periods, then by price).  Returns None
    when the simple policy violates a constraint (for example a tight
    transformer cap); the QP solver then finds its own feasible point.
    """
    x = np.zeros(len(asm.keys))
    price = scenario.price_cents_per_kwh
    wind_avail = np.asarray(wind, dtype=float).copy()
    t0 = periods.start
    for plan in plans:
        s = plan.session
        e_c = s.spec.eta_c * plan.p
        reachable = plan.reach_rhs >= -KWH_TOL
        if plan.col_prev_c is not None:
            x[plan.col_prev_c] = plan.last_rate_c
        if plan.col_prev_d is not None:
            x[plan.col_prev_d] = plan.last_rate_d
        if s.is_v2g:
            for t in range(plan.start, s.t_dep):
                x[plan.cols_y_c[t]] = 0.0
                x[plan.cols_y_d[t]] = 1.0
        x[plan.col_z] = 0.0 if reachable else 1.0
        soc = plan.soc_start
        for t in range(plan.start, plan.forced_end):
            x[plan.cols_x_c[t]] = 1.0
            soc += e_c
            wind_avail[t - t0] -= plan.p
        if reachable and e_c > 0 and soc < s.soc_desired_kwh - KWH_TOL:
            need = s.soc_desired_kwh - soc
            free_periods = sorted(
                range(plan.forced_end, s.t_dep),
                key=lambda t: (0 if wind_avail[t - t0] >= plan.p else 1,
                               float(price[t]), t))
            for t in free_periods:
                rate = min(1.0, need / e_c)
                x[plan.cols_x_c[t]] = rate
                wind_avail[t - t0] -= plan.p * rate
                need -= e_c * rate
                if need <= KWH_TOL:
                    break
        # integrate the final trajectory in period order
        soc = plan.soc_start
        x[plan.cols_soc[plan.start]] = soc
        for t in range(plan.start, s.t_dep):
            soc += e_c * x[plan.cols_x_c[t]]
            if soc > s.spec.battery_capacity_kwh + KWH_TOL:
                return None
            x[plan.cols_soc[t + 1]] = soc
        if reachable and soc < s.soc_desired_kwh - KWH_TOL:
            return None
    for m, t in enumerate(periods):
        net = -float(wind[m])
        for plan in plans:
            if plan.start <= t < plan.session.t_dep:
                net += plan.p * x[plan.cols_x_c[t]]
        x[g_cols[t]] = max(net, 0.0)
        x[w_cols[t]] = max(-net, 0.0)
        if x[g_cols[t]] > scenario.p_g_max_kwh + KWH_TOL:
            return None
    # the hint must satisfy x_c >= z rows when z = 1 (covered by forcing) and
    # all bounds; a final numeric check guards the corner cases
    if np.any(x < np.array(asm.lb) - 1e-9) or np.any(x > np.array(asm.ub) + 1e-9):
        return None
    return x


def build_static(scenario: Scenario, alpha: float = 0.05, beta: float = 0.1) -> MiqpProblem:
    """Day-ahead problem over the full horizon with all sessions known."""
    grid = scenario.grid
    periods = range(grid.horizon_periods)
    asm = _Assembler()
    waived: set[str] = set()
    plans = []
    for s in scenario.sessions:
        plan = _plan_session(s, grid, s.t_arr, s.soc_init_kwh, waived)
        _emit_session(asm, plan, scenario.lam, alpha, beta)
        plans.append(plan)
    wind = np.asarray(scenario.wind_kwh, dtype=float)
    g_cols, w_cols = _emit_grid(asm, scenario, periods, wind, None, plans)
    hint = _feasible_hint(asm, plans, scenario, periods, wind, g_cols, w_cols)
    return asm.build(feasible_hint=hint, min_soc_waived=frozenset(waived))


def build_dynamic(
    scenario: Scenario,
    entries: list[WindowEntry],
    j: int,
    wind_forecast: np.ndarray,
    future_demand: np.ndarray | None = None,
    alpha: float = 0.05,
    beta: float = 0.1,
) -> MiqpProblem:
    """Re-planning window problem at planning index ``j``.

    The window runs from ``phi(j)`` to the latest departure among
    ``entries``; each entry supplies the current SOC and the rates of the
    period before the window, which pin the first ramp terms.
    """
    if not entries:
        raise BuildError("cannot build a window problem with no active sessions")
    grid = scenario.grid
    phi = grid.phi(j)
    tau = max(e.session.t_dep for e in entries)
    if any(e.session.t_dep <= phi for e in entries):
        raise BuildError("entries must depart strictly after the planning time")
    periods = range(phi, tau)
    wind_forecast = np.asarray(wind_forecast, dtype=float)
    if wind_forecast.shape != (len(periods),):
        raise BuildError("wind forecast must cover exactly the planning window")
    if future_demand is not None:
        future_demand = np.asarray(future_demand, dtype=float)
        if future_demand.shape != (len(periods),):
            raise BuildError("future demand must cover exactly the planning window")

    asm = _Assembler()
    waived: set[str] = set()
    plans = []
    for e in entries:
        plan = _plan_session(e.session, grid, phi, e.soc_now_kwh, waived)
        plan.last_rate_c = e.last_rate_c
        plan.last_rate_d = e.last_rate_d
        if phi >= 1:
            sid = e.session.id
            plan.col_prev_c = asm.add_var(("x_c_prev", sid, phi - 1), 0.0, 1.0)
            asm.add_eq(("pin_c", sid, phi - 1),
                       [(plan.col_prev_c, 1.0)], float(e.last_rate_c))
            if e.session.is_v2g:
                plan.col_prev_d = asm.add_var(("x_d_prev", sid, phi - 1), 0.0, 1.0)
                asm.add_eq(("pin_d", sid, phi - 1),
                           [(plan.col_prev_d, 1.0)], float(e.last_rate_d))
        _emit_session(asm, plan, scenario.lam, alpha, beta)
        plans.append(plan)
    g_cols, w_cols = _emit_grid(asm, scenario, periods, wind_forecast, future_demand, plans)
    hint = _feasible_hint(asm, plans, scenario, periods, wind_forecast, g_cols, w_cols)
    return asm.build(feasible_hint=hint, min_soc_waived=frozenset(waived))


class PointCompleter:
    """Recomputes the derived columns of a candidate point.

    Given rate and binary values, the SOC chains (through the init and
    update rows), the pinned previous-rate columns, and the grid/curtailment
    columns (tightened against their defining rows) are all implied.
    Completing a perturbed point this way keeps warm starts feasible after
    branch fixings, heuristic roundings, or window-to-window hand-offs.
    """

    def __init__(self, problem: MiqpProblem) -> None:
        self.problem = problem
        self.by_key = {key: k for k, key in enumerate(problem.variables)}
        a_eq = problem.a_eq.tocsr()
        self.eq_steps: list[tuple[int, list[tuple[int, float]], float]] = []
        charge_gain: dict[str, float] = {}
        for r, label in enumerate(problem.eq_labels):
            kind = label[0]
            if kind not in ("soc_init", "soc_step", "pin_c", "pin_d"):
                continue
            lo, hi = a_eq.indptr[r], a_eq.indptr[r + 1]
            cols = a_eq.indices[lo:hi]
            vals = a_eq.data[lo:hi]
            if kind == "soc_init" or kind.startswith("pin"):
                target = int(cols[0])
                self.eq_steps.append((target, [], float(problem.b_eq[r] / vals[0]),
                                      None, 0.0, None, 0.0))
            else:
                sid, t = label[1], label[2]
                target = self.by_key[("soc", sid, t)]
                rest = [(int(c), float(v)) for c, v in zip(cols, vals) if c != target]
                xc_col, e_c, xd_col, e_d = None, 0.0, None, 0.0
                for c, v in rest:
                    role = problem.variables[c][0]
                    if role == "x_c":
                        xc_col, e_c = c, -v
                        charge_gain[sid] = -v
                    elif role == "x_d":
                        xd_col, e_d = c, v
                # target coefficient is +1 in the emitted rows
                self.eq_steps.append((target, rest, float(problem.b_eq[r]),
                                      xc_col, e_c, xd_col, e_d))
        a_ub = problem.a_ub.tocsr()
        self.tighten: list[tuple[int, list[tuple[int, float]], float]] = []
        self.desired: dict[str, dict] = {}
        for r, label in enumerate(problem.ub_labels):
            kind = label[0]
            lo, hi = a_ub.indptr[r], a_ub.indptr[r + 1]
            cols = a_ub.indices[lo:hi]
            vals = a_ub.data[lo:hi]
            if kind in ("grid", "curtail"):
                role = "g" if kind == "grid" else "omega"
                target = self.by_key[(role, "", label[2])]
                rest = [(int(c), float(v)) for c, v in zip(cols, vals) if c != target]
                self.tighten.append((target, rest, float(problem.b_ub[r])))
            elif kind == "desired":
                sid = label[1]
                entry = {"required": -float(problem.b_ub[r]), "z_col": None}
                for c in cols:
                    role = problem.variables[c][0]
                    if role == "soc":
                        entry["dep_col"] = int(c)
                    elif role == "z":
                        entry["z_col"] = int(c)
                        entry["big_m"] = -float(vals[list(cols).index(c)])
                self.desired[sid] = entry
        for sid, entry in self.desired.items():
            entry["gain"] = charge_gain.get(sid, 0.0)
            entry["xc_cols"] = sorted(
                ((key[2], col) for key, col in self.by_key.items()
                 if key[0] == "x_c" and key[1] == sid))
            entry["yc_cols"] = {key[2]: col for key, col in self.by_key.items()
                                if key[0] == "y_c" and key[1] == sid}
        # structures for repairing arbitrary near-feasible points
        self.reach_floor: list[tuple[int, float]] = []
        for r, label in enumerate(problem.ub_labels):
            if label[0] != "reach":
                continue
            lo, hi = a_ub.indptr[r], a_ub.indptr[r + 1]
            if hi == lo:
                continue
            col = int(a_ub.indices[lo])
            big_m = -float(a_ub.data[lo])
            if big_m > 0:
                floor = max(0.0, -float(problem.b_ub[r]) / big_m)
                self.reach_floor.append((col, floor))
        self.pairs: list[tuple[int, int, int | None, int | None]] = []
        for key, col in self.by_key.items():
            if key[0] != "y_c":
                continue
            _, sid, t = key
            y_d = self.by_key.get(("y_d", sid, t))
            if y_d is None:
                continue
            self.pairs.append((col, y_d, self.by_key.get(("x_c", sid, t)),
                               self.by_key.get(("x_d", sid, t))))
        self.z_floor: list[tuple[int, int]] = []
        for key, col in self.by_key.items():
            if key[0] == "z":
                sid = key[1]
                for (role, s2, t), xc_col in self.by_key.items():
                    if role == "x_c" and s2 == sid:
                        self.z_floor.append((xc_col, col))

    def complete(self, x: np.ndarray, adjust_rates: bool = False) -> np.ndarray:
        """Re-derive the implied columns from the rates and binaries.

        With ``adjust_rates`` the charge/discharge rates feeding a state
        value that would cross its bounds are nudged back inside, keeping
        the chain rows exact instead of clipping their state column.
        """
        out = x.copy()
        lb, ub = self.problem.lb, self.problem.ub
        for target, rest, b, xc_col, e_c, xd_col, e_d in self.eq_steps:
            acc = b
            for c, v in rest:
                acc -= v * out[c]
            if adjust_rates:
                if acc > ub[target] + 1e-12 and xc_col is not None and e_c > 0:
                    dec = min((acc - ub[target]) / e_c, out[xc_col] - lb[xc_col])
                    if dec > 0:
                        out[xc_col] -= dec
                        acc -= e_c * dec
                if acc < lb[target] - 1e-12 and xd_col is not None and e_d > 0:
                    dec = min((lb[target] - acc) / e_d, out[xd_col] - lb[xd_col])
                    if dec > 0:
                        out[xd_col] -= dec
                        acc += e_d * dec
                if acc < lb[target] - 1e-12 and xc_col is not None and e_c > 0:
                    inc = min((lb[target] - acc) / e_c, ub[xc_col] - out[xc_col])
                    if inc > 0:
                        out[xc_col] += inc
                        acc += e_c * inc
            out[target] = acc
        for target, rest, b in self.tighten:
            acc = -b
            for c, v in rest:
                acc += v * out[c]
            # row reads  -target + acc' <= b, so the tight value is acc
            out[target] = min(max(acc, lb[target]), ub[target])
        return out

    def repair(self, x: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
        """Project a near-feasible point onto the constraint structure.

        Fallback binaries are floored by their reachability rows, exclusivity
        pairs are made consistent and their rates pulled inside the caps,
        charge rates are floored by active fallback binaries, the derived
        columns are re-completed, and final-SOC shortfalls are topped up.
        The result is exactly feasible whenever the input was close.
        """
        x = np.clip(x, lb, ub)
        for col, floor in self.reach_floor:
            x[col] = min(max(x[col], floor, lb[col]), ub[col])
        for y_c, y_d, x_c, x_d in self.pairs:
            yc = x[y_c]
            yd = 1.0 - yc
            if yd < lb[y_d] - 1e-12 or yd > ub[y_d] + 1e-12:
                yd = min(max(yd, lb[y_d]), ub[y_d])
                yc = min(max(1.0 - yd, lb[y_c]), ub[y_c])
            x[y_c], x[y_d] = yc, yd
            if x_c is not None:
                x[x_c] = min(x[x_c], max(1.0 - yc, lb[x_c]))
            if x_d is not None:
                x[x_d] = min(x[x_d], max(1.0 - yd, lb[x_d]))
        for xc_col, z_col in self.z_floor:
            x[xc_col] = max(x[xc_col], min(x[z_col], ub[xc_col]))
        x = self.complete(np.clip(x, lb, ub), adjust_rates=True)
        if self.top_up(x, lb, ub):
            x = self.complete(np.clip(x, lb, ub), adjust_rates=True)
        return x

    def top_up(self, x: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> bool:
        """Raise charge rates until every hard final-SOC requirement holds.

        Operates on a completed point; returns True when anything moved (the
        caller must re-complete).  Sessions whose fallback binary is active
        carry no hard requirement.
        """
        moved = False
        for sid, entry in self.desired.items():
            required = entry["required"]
            if entry["z_col"] is not None:
                required -= entry.get("big_m", 0.0) * x[entry["z_col"]]
            need = required - x[entry["dep_col"]]
            gain = entry["gain"]
            if need <= 1e-9 or gain <= 0:
                continue
            for t, col in reversed(entry["xc_cols"]):
                cap = ub[col]
                yc = entry["yc_cols"].get(t)
                if yc is not None:
                    cap = min(cap, 1.0 - x[yc])
                headroom = cap - x[col]
                if headroom <= 1e-12:
                    continue
                delta = min(headroom, need / gain)
                x[col] += delta
                need -= gain * delta
                moved = True
                if need <= 1e-9:
                    break
        return moved


def presolve(problem: MiqpProblem) -> tuple[MiqpProblem, dict[VarKey, float]]:
    """Fix every full-speed fallback binary from the problem data.

    The reachability row involves only data and the z column, so each z is
    pinned: 0 when full-speed charging reaches the desired level, otherwise
    1 (which also raises the session's charge-rate lower bounds to 1).  The
    fixed columns and the rows they trivialise are removed; the optimal
    objective value is unchanged.
    """
    z_cols = [k for k, key in enumerate(problem.variables) if key[0] == "z"]
    if not z_cols:
        return problem, {}
    reach_rhs = {label[1]: problem.b_ub[r]
                 for r, label in enumerate(problem.ub_labels) if label[0] == "reach"}
    fixes: dict[VarKey, float] = {}
    fixed_value = np.zeros(problem.n_variables)
    drop_col = np.zeros(problem.n_variables, dtype=bool)
    force_one: set[str] = set()
    for k in z_cols:
        key = problem.variables[k]
        sid = key[1]
        if sid not in reach_rhs:
            continue
        value = 0.0 if reach_rhs[sid] >= -KWH_TOL else 1.0
        fixes[key] = value
        fixed_value[k] = value
        drop_col[k] = True
        if value == 1.0:
            force_one.add(sid)

    keep_cols = np.flatnonzero(~drop_col)
    lb = problem.lb[keep_cols].copy()
    ub = problem.ub[keep_cols].copy()
    variables = tuple(problem.variables[k] for k in keep_cols)
    for pos, key in enumerate(variables):
        if key[0] == "x_c" and key[1] in force_one:
            lb[pos] = 1.0

    drop_eq = np.zeros(problem.a_eq.shape[0], dtype=bool)
    drop_ub = np.zeros(problem.a_ub.shape[0], dtype=bool)
    for r, label in enumerate(problem.ub_labels):
        kind, sid = label[0], label[1]
        if kind in ("reach", "xc_ge_z") and sid in reach_rhs:
            drop_ub[r] = True
        elif kind == "desired" and sid in force_one:
            drop_ub[r] = True

    b_eq = problem.b_eq - problem.a_eq @ fixed_value
    b_ub = problem.b_ub - problem.a_ub @ fixed_value
    lin_shift = problem.q @ fixed_value
    c = problem.c + lin_shift
    offset = problem.objective_offset + float(problem.c @ fixed_value) \
        + 0.5 * float(fixed_value @ lin_shift)

    keep_eq = np.flatnonzero(~drop_eq)
    keep_ub = np.flatnonzero(~drop_ub)
    csc_q = problem.q.tocsc()
    hint = problem.feasible_hint
    new_hint = None
    if hint is not None:
        consistent = all(abs(hint[k] - fixed_value[k]) < 1e-9
                         for k in np.flatnonzero(drop_col))
        if consistent:
            new_hint = hint[keep_cols]
    reduced = MiqpProblem(
        q=csc_q[:, keep_cols][keep_cols, :].tocsr(),
        c=c[keep_cols],
        a_eq=problem.a_eq.tocsc()[:, keep_cols].tocsr()[keep_eq],
        b_eq=b_eq[keep_eq],
        a_ub=problem.a_ub.tocsc()[:, keep_cols].tocsr()[keep_ub],
        b_ub=b_ub[keep_ub],
        lb=lb, ub=ub,
        binary_cols=np.array(
            [pos for pos, key in enumerate(variables)
             if key[0] in ("y_c", "y_d", "z")], dtype=int),
        variables=variables,
        eq_labels=tuple(problem.eq_labels[r] for r in keep_eq),
        ub_labels=tuple(problem.ub_labels[r] for r in keep_ub),
        objective_offset=offset,
        feasible_hint=new_hint,
        min_soc_waived=problem.min_soc_waived,
    )
    return reduced, fixes


def extract_schedule(problem: MiqpProblem, x: np.ndarray, scenario: Scenario) -> Schedule:
    """Turn a solver point for a full-horizon problem into a Schedule.

    Rates are read from the directory and clipped to [0, 1]; SOC and the
    grid/curtailment series are re-derived from the rates, which tightens G
    and Omega to the balance identity regardless of their raw values.
    """
    h = scenario.grid.horizon_periods
    n = scenario.n_sessions
    index = {s.id: k for k, s in enumerate(scenario.sessions)}
    x_c = np.zeros((n, h))
    x_d = np.zeros((n, h))
    for k, key in enumerate(problem.variables):
        role, sid, t = key
        if role == "x_c":
            x_c[index[sid], t] = min(1.0, max(0.0, float(x[k])))
        elif role == "x_d":
            x_d[index[sid], t] = min(1.0, max(0.0, float(x[k])))
    return assemble_schedule(scenario, x_c, x_d)


def dump_problem(problem: MiqpProblem, fp) -> None:
    """Write the problem in a plain-text sparse format, one line per nonzero.

    Format (whitespace-separated)::

        problem <n_vars> <n_eq> <n_ub> <offset>
        var <col> <role>:<session>:<period> <lb> <ub> <cost> <bin|cont>
        q <i> <j> <value>          # entries of Q (0.5 x'Qx convention)
        eq <row> <col> <value>     # A_eq nonzeros
        eqb <row> <kind> <value>   # equality right-hand sides
        ub <row> <col> <value>     # A_ub nonzeros
        ubb <row> <kind> <value>   # inequality right-hand sides
    """
    fp.write(f"problem {problem.n_variables} {problem.a_eq.shape[0]} "
             f"{problem.a_ub.shape[0]} {problem.objective_offset!r}\n")
    for k, (role, sid, t) in enumerate(problem.variables):
        kind = "bin" if k in set(problem.binary_cols.tolist()) else "cont"
        fp.write(f"var {k} {role}:{sid}:{t} {problem.lb[k]!r} {problem.ub[k]!r} "
                 f"{problem.c[k]!r} {kind}\n")
    q = problem.q.tocoo()
    for i, jx, v in zip(q.row, q.col, q.data):
        fp.write(f"q {i} {jx} {v!r}\n")
    for name, mat, rhs, labels in (("eq", problem.a_eq, problem.b_eq, problem.eq_labels),
                                   ("ub", problem.a_ub, problem.b_ub, problem.ub_labels)):
        coo = mat.tocoo()
        for i, jx, v in zip(coo.row, coo.col, coo.data):
            fp.write(f"{name} {i} {jx} {v!r}\n")
        for r, b in enumerate(rhs):
            kind = ":".join(str(p) for p in labels[r])
            fp.write(f"{name}b {r} {kind} {b!r}\n")
