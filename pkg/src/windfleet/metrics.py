"""Objective metrics, cost breakdowns, and run-to-run comparison tables.

Cost conventions: grid energy is bought at the trace price; energy
discharged by one vehicle is sold to the concurrently charging vehicles at
``discharge_price_factor`` (90% by default) of that price, so fleet-level
discharge revenue and discharge purchases cancel exactly.  Wind energy is
free.  Reported money excludes the curtailment shaping penalty (it is a
steering weight, not a cash flow).  Wind utilization is the captured share
``(sum W - sum Omega) / sum W``; a windless scenario reports it as None.

Per-session charge costs are allocated pro-rata by energy drawn within each
period, since paid energy (grid, discharge) and free wind are pooled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .degradation import DegradationParams, linear_cost, quadratic_cost
from .domain import DomainError, Scenario, Schedule, max_energy_per_period


@dataclass(frozen=True)
class SessionReport:
    session_id: str
    mode: str
    charged_kwh: float
    discharged_kwh: float
    charge_cost_cents: float
    degradation_cost_cents: float
    discharge_revenue_cents: float
    final_soc_kwh: float
    desired_met: bool


@dataclass(frozen=True)
class Report:
    scenario_key: str
    label: str
    total_grid_supply_kwh: float
    wind_utilization_pct: float | None
    total_curtailment_kwh: float
    total_discharged_kwh: float
    charge_cost_cents: float
    degradation_cost_cents: float
    discharge_revenue_cents: float
    total_cost_cents: float
    objective_cents: float
    degradation_model: str
    per_session: tuple[SessionReport, ...]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        data = json.loads(text)
        data["per_session"] = tuple(SessionReport(**row) for row in data["per_session"])
        return cls(**data)


def report(
    scenario: Scenario,
    schedule: Schedule,
    degradation_model: str = "quadratic",
    params: DegradationParams = DegradationParams(),
    label: str = "",
) -> Report:
    """Compute the full metric set of one schedule."""
    if degradation_model not in ("quadratic", "linear", "linear-abs"):
        raise DomainError(f"unknown degradation model {degradation_model!r}")
    grid = scenario.grid
    price = scenario.price_cents_per_kwh
    factor = scenario.discharge_price_factor
    n = scenario.n_sessions
    h = grid.horizon_periods

    p_vec = np.array([max_energy_per_period(s.spec, grid) for s in scenario.sessions])
    charged = p_vec[:, None] * schedule.x_c              # kWh drawn per session/period
    discharged = p_vec[:, None] * schedule.x_d
    charge_totals = charged.sum(axis=0)                  # fleet kWh per period
    discharge_totals = discharged.sum(axis=0)

    paid_pool = price * schedule.g_kwh + factor * price * discharge_totals
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(charge_totals > 0, paid_pool / np.where(charge_totals > 0,
                                                                 charge_totals, 1.0), 0.0)
    per_session_cost = charged * share[None, :]
    per_session_revenue = discharged * (factor * price)[None, :]

    sessions = []
    degradation_total = 0.0
    for k, s in enumerate(scenario.sessions):
        lo, hi = s.t_arr, s.t_dep
        x_c_row = schedule.x_c[k, lo:hi]
        x_d_row = schedule.x_d[k, lo:hi] if s.is_v2g else None
        if degradation_model == "quadratic":
            deg = quadratic_cost(s, grid, x_c_row, x_d_row, params)
        else:
            deg = linear_cost(s, grid, x_c_row, x_d_row, params,
                              absolute=degradation_model == "linear-abs")
        degradation_total += deg
        final = float(schedule.soc[k, hi])
        sessions.append(SessionReport(
            session_id=s.id,
            mode=s.mode.value,
            charged_kwh=float(charged[k].sum()),
            discharged_kwh=float(discharged[k].sum()),
            charge_cost_cents=float(per_session_cost[k].sum()),
            degradation_cost_cents=float(deg),
            discharge_revenue_cents=float(per_session_revenue[k].sum()),
            final_soc_kwh=final,
            desired_met=final >= s.soc_desired_kwh - 1e-6,
        ))

    total_wind = float(np.sum(scenario.wind_kwh))
    total_curtail = float(np.sum(schedule.omega_kwh))
    utilization = None
    if total_wind > 0:
        utilization = 100.0 * (total_wind - total_curtail) / total_wind
    charge_cost = float(np.sum(paid_pool))
    revenue = float(np.sum(per_session_revenue))
    quad_obj_degradation = degradation_total
    if degradation_model != "quadratic":
        quad_obj_degradation = sum(
            quadratic_cost(s, grid, schedule.x_c[k, s.t_arr:s.t_dep],
                           schedule.x_d[k, s.t_arr:s.t_dep] if s.is_v2g else None,
                           params)
            for k, s in enumerate(scenario.sessions))
    objective = float(price @ schedule.g_kwh
                      + scenario.lam * quad_obj_degradation
                      + scenario.delta * (price @ schedule.omega_kwh))
    return Report(
        scenario_key=scenario.scenario_key(),
        label=label,
        total_grid_supply_kwh=float(np.sum(schedule.g_kwh)),
        wind_utilization_pct=utilization,
        total_curtailment_kwh=total_curtail,
        total_discharged_kwh=float(np.sum(discharge_totals)),
        charge_cost_cents=charge_cost,
        degradation_cost_cents=float(degradation_total),
        discharge_revenue_cents=revenue,
        total_cost_cents=charge_cost + degradation_total - revenue,
        objective_cents=objective,
        degradation_model=degradation_model,
        per_session=tuple(sessions),
    )


_COMPARE_METRICS = (
    "total_grid_supply_kwh",
    "wind_utilization_pct",
    "total_curtailment_kwh",
    "total_discharged_kwh",
    "charge_cost_cents",
    "degradation_cost_cents",
    "discharge_revenue_cents",
    "total_cost_cents",
    "objective_cents",
)


@dataclass(frozen=True)
class ComparisonTable:
    labels: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float | None, ...], tuple[float | None, ...]], ...]

    def to_csv(self) -> str:
        header = ["metric"] + list(self.labels) + \
            [f"delta_{lab}" for lab in self.labels[1:]]
        lines = [",".join(header)]
        for name, values, deltas in self.rows:
            cells = [name]
            cells += ["" if v is None else repr(v) for v in values]
            cells += ["" if d is None else repr(d) for d in deltas]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def compare(reports: list[Report]) -> ComparisonTable:
    """Tabulate metrics across runs of the same scenario.

    The first report is the reference; deltas are ``value - reference``.
    Reports from different scenarios are refused.
    """
    if len(reports) < 2:
        raise DomainError("compare needs at least two reports")
    key = reports[0].scenario_key
    for r in reports[1:]:
        if r.scenario_key != key:
            raise DomainError("reports come from different scenarios: "
                              f"{key!r} vs {r.scenario_key!r}")
    labels = tuple(r.label or f"run{k}" for k, r in enumerate(reports))
    rows = []
    for metric in _COMPARE_METRICS:
        values = tuple(getattr(r, metric) for r in reports)
        ref = values[0]
        deltas = tuple(
            None if (v is None or ref is None) else v - ref for v in values[1:])
        rows.append((metric, values, deltas))
    return ComparisonTable(labels=labels, rows=tuple(rows))
