"""File formats: scenario JSON, wind/price CSV, schedule CSV, diagnostics.

CSV schemas (bit-exact round-trips, floats written with ``repr``):

* wind:     header ``period,kwh``, one row per 15-minute period, 0-based.
* price:    header ``period,cents_per_kwh``, same layout.
* schedule: header ``session_id,period,x_c,x_d,soc_kwh`` with one row per
  session and plug period (``soc_kwh`` is the level at the period start),
  followed by grid pseudo-rows ``_grid,<period>,<g_kwh>,<omega_kwh>,``.

The scenario JSON stores sessions inline and references the two trace CSVs
by path (relative paths resolve against the JSON's directory).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .domain import (
    DomainError,
    EvSession,
    EvSpec,
    Mode,
    Scenario,
    Schedule,
    TimeGrid,
)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


def write_trace_csv(path: Path, values: np.ndarray, value_column: str) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["period", value_column])
        for t, v in enumerate(values):
            writer.writerow([t, repr(float(v))])


def read_trace_csv(path: Path, value_column: str, expand_hourly: bool = False) -> np.ndarray:
    if not Path(path).exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["period", value_column]:
            raise ConfigError(f"{path}: expected header 'period,{value_column}'")
        values = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}:{ln}: expected two columns")
            if int(row[0]) != len(values):
                raise ConfigError(f"{path}:{ln}: periods must be consecutive from 0")
            values.append(float(row[1]))
    out = np.array(values, dtype=float)
    if expand_hourly:
        out = np.repeat(out / 4.0, 4) if value_column == "kwh" else np.repeat(out, 4)
    return out


def _spec_to_dict(spec: EvSpec) -> dict:
    return {
        "acceptance_rate_kw": spec.acceptance_rate_kw,
        "battery_capacity_kwh": spec.battery_capacity_kwh,
        "charger_power_kw": spec.charger_power_kw,
        "battery_cost_usd": spec.battery_cost_usd,
        "eta_c": spec.eta_c,
        "eta_d": spec.eta_d,
    }


def _session_to_dict(s: EvSession) -> dict:
    return {
        "id": s.id,
        "spec": _spec_to_dict(s.spec),
        "t_arr": s.t_arr,
        "t_dep": s.t_dep,
        "soc_init_kwh": s.soc_init_kwh,
        "soc_desired_kwh": s.soc_desired_kwh,
        "soc_min_kwh": s.soc_min_kwh,
        "mode": s.mode.value,
    }


def save_scenario(scenario: Scenario, json_path: Path,
                  wind_csv: str = "wind.csv", price_csv: str = "price.csv") -> None:
    """Write scenario.json plus the two trace CSVs next to it."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(json_path.parent / wind_csv, scenario.wind_kwh, "kwh")
    write_trace_csv(json_path.parent / price_csv, scenario.price_cents_per_kwh,
                    "cents_per_kwh")
    doc = {
        "format": "windfleet-scenario-v1",
        "seed": scenario.seed,
        "grid": {
            "delta_t_minutes": scenario.grid.delta_t_minutes,
            "periods_per_day": scenario.grid.periods_per_day,
            "horizon_periods": scenario.grid.horizon_periods,
            "planning_interval_minutes": scenario.grid.planning_interval_minutes,
        },
        "lambda": scenario.lam,
        "delta": scenario.delta,
        "p_g_max_kwh": None if math.isinf(scenario.p_g_max_kwh) else scenario.p_g_max_kwh,
        "discharge_price_factor": scenario.discharge_price_factor,
        "wind_csv": wind_csv,
        "price_csv": price_csv,
        "sessions": [_session_to_dict(s) for s in scenario.sessions],
    }
    json_path.write_text(json.dumps(doc, indent=2) + "\n")


def load_scenario(json_path: Path, expand_hourly: bool = False) -> Scenario:
    json_path = Path(json_path)
    if not json_path.exists():
        raise FileNotFoundError(f"scenario file not found: {json_path}")
    try:
        doc = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{json_path}: invalid JSON ({exc})") from exc
    if doc.get("format") != "windfleet-scenario-v1":
        raise ConfigError(f"{json_path}: not a scenario file")
    base = json_path.parent
    wind = read_trace_csv(base / doc["wind_csv"], "kwh", expand_hourly)
    price = read_trace_csv(base / doc["price_csv"], "cents_per_kwh", expand_hourly)
    g = doc["grid"]
    grid = TimeGrid(delta_t_minutes=g["delta_t_minutes"],
                    periods_per_day=g["periods_per_day"],
                    horizon_periods=g["horizon_periods"],
                    planning_interval_minutes=g["planning_interval_minutes"])
    sessions = []
    for row in doc["sessions"]:
        spec = EvSpec(**row["spec"])
        sessions.append(EvSession(
            id=row["id"], spec=spec, t_arr=row["t_arr"], t_dep=row["t_dep"],
            soc_init_kwh=row["soc_init_kwh"],
            soc_desired_kwh=row["soc_desired_kwh"],
            soc_min_kwh=row["soc_min_kwh"],
            mode=Mode(row["mode"]),
        ))
    sessions.sort(key=lambda s: (s.t_arr, s.id))
    cap = doc.get("p_g_max_kwh")
    try:
        return Scenario(
            grid=grid, wind_kwh=wind, price_cents_per_kwh=price,
            sessions=tuple(sessions),
            lam=doc.get("lambda", 1.0),
            delta=doc.get("delta", 0.25),
            p_g_max_kwh=math.inf if cap is None else float(cap),
            discharge_price_factor=doc.get("discharge_price_factor", 0.9),
            seed=doc.get("seed"),
        )
    except DomainError as exc:
        raise ConfigError(f"{json_path}: {exc}") from exc


def write_schedule_csv(path: Path, scenario: Scenario, schedule: Schedule) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["session_id", "period", "x_c", "x_d", "soc_kwh"])
        for k, s in enumerate(scenario.sessions):
            for t in s.plug_periods:
                writer.writerow([s.id, t, repr(float(schedule.x_c[k, t])),
                                 repr(float(schedule.x_d[k, t])),
                                 repr(float(schedule.soc[k, t]))])
        for t in range(schedule.horizon):
            writer.writerow(["_grid", t, repr(float(schedule.g_kwh[t])),
                             repr(float(schedule.omega_kwh[t])), ""])


def read_schedule_csv(path: Path, scenario: Scenario) -> Schedule:
    """Rebuild a Schedule from its CSV (rates drive SOC and grid series)."""
    from .domain import assemble_schedule

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"schedule file not found: {path}")
    n = scenario.n_sessions
    h = scenario.grid.horizon_periods
    index = {s.id: k for k, s in enumerate(scenario.sessions)}
    x_c = np.zeros((n, h))
    x_d = np.zeros((n, h))
    with open(path, newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or header[:2] != ["session_id", "period"]:
            raise ConfigError(f"{path}: not a schedule file")
        for row in reader:
            if not row or row[0] == "_grid":
                continue
            k = index.get(row[0])
            if k is None:
                raise ConfigError(f"{path}: unknown session {row[0]!r}")
            t = int(row[1])
            x_c[k, t] = float(row[2])
            x_d[k, t] = float(row[3])
    return assemble_schedule(scenario, x_c, x_d)


def write_diagnostics_jsonl(path: Path, steps) -> None:
    with open(path, "w") as fp:
        for d in steps:
            fp.write(json.dumps({
                "j": d.j, "n_active": d.n_active,
                "window": [d.window_start, d.window_end],
                "objective": d.objective, "bound": d.bound, "gap": d.gap,
                "status": d.status, "nodes": d.nodes,
                "solve_time_s": d.solve_time_s,
            }) + "\n")
